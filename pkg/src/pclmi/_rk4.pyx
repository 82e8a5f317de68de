# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping loop for batches of small linear recurrences x <- Phi_s x."""

from libc.stdlib cimport free, malloc


cdef inline void _matvec(const double* M, const double* x, double* y, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    cdef const double* row
    for i in range(k):
        row = M + i * k
        acc = 0.0
        for j in range(k):
            acc += row[j] * x[j]
        y[i] = acc


def propagate(const double[:, :, ::1] Phi, const double[:, ::1] x0,
              Py_ssize_t steps, Py_ssize_t save_every, double[:, :, ::1] out):
    """x_{j+1} = Phi_s x_j per sample; ``out[s, j]`` holds step ``j * save_every``."""
    cdef Py_ssize_t S = Phi.shape[0], k = Phi.shape[1]
    cdef Py_ssize_t s, n, i
    cdef const double* P
    cdef double* buf = <double*> malloc(2 * k * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* x = buf
    cdef double* y = buf + k
    cdef double* t
    try:
        with nogil:
            for s in range(S):
                P = &Phi[s, 0, 0]
                for i in range(k):
                    x[i] = x0[s, i]
                    out[s, 0, i] = x[i]
                for n in range(1, steps + 1):
                    _matvec(P, x, y, k)
                    t = x
                    x = y
                    y = t
                    if n % save_every == 0:
                        for i in range(k):
                            out[s, n // save_every, i] = x[i]
    finally:
        free(buf)
