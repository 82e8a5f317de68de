"""Dense semidefinite programming for small LMI problems.

Problems are stated in LMI form::

    maximize    f(x)
    subject to  F_k(x) = F_k0 + sum_i x_i F_ki  <= 0   (negative semidefinite)

where ``x`` collects the entries of symmetric-matrix, full-matrix and scalar
variables. The solver is a primal-dual interior-point method on the
homogeneous self-dual embedding of the conic pair

    minimize c'x  s.t.  G x + s = h,  s >= 0
    maximize -h'z s.t.  G'z + c = 0,  z >= 0

with Nesterov-Todd scaling and Mehrotra predictor-corrector steps. Blocks of
equal size are stacked so every per-block operation is a batched LAPACK call;
Monte-Carlo problems with thousands of small blocks stay cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Variable:
    """A decision variable.

    ``kind`` is ``"symmetric"`` (shape ``(k, k)``), ``"matrix"`` (shape
    ``(r, c)``) or ``"scalar"`` (shape ``()``).
    """

    name: str
    kind: str
    shape: tuple

    @classmethod
    def symmetric(cls, name: str, k: int) -> "Variable":
        return cls(name, "symmetric", (k, k))

    @classmethod
    def matrix(cls, name: str, rows: int, cols: int) -> "Variable":
        return cls(name, "matrix", (rows, cols))

    @classmethod
    def scalar(cls, name: str) -> "Variable":
        return cls(name, "scalar", ())

    @property
    def size(self) -> int:
        if self.kind == "symmetric":
            k = self.shape[0]
            return k * (k + 1) // 2
        if self.kind == "matrix":
            return self.shape[0] * self.shape[1]
        return 1

    def basis(self):
        """Yield the unit assignments spanning this variable."""
        if self.kind == "symmetric":
            k = self.shape[0]
            for i in range(k):
                for j in range(i, k):
                    e = np.zeros((k, k))
                    e[i, j] = e[j, i] = 1.0
                    yield e
        elif self.kind == "matrix":
            for idx in range(self.size):
                e = np.zeros(self.shape)
                e.flat[idx] = 1.0
                yield e
        elif self.kind == "scalar":
            yield np.float64(1.0)
        else:
            raise ValueError(f"unknown variable kind {self.kind!r}")

    def zeros(self):
        return np.zeros(self.shape) if self.shape else np.float64(0.0)

    def unpack(self, vec: np.ndarray):
        """Rebuild the variable value from its coordinate vector."""
        out = self.zeros()
        for coef, e in zip(vec, self.basis()):
            out = out + coef * e
        return out


@dataclass(frozen=True)
class LmiConstraint:
    """Affine matrix map required to be negative semidefinite.

    ``fn`` receives a mapping from variable name to value and must return a
    symmetric matrix; it must be affine in the values.
    """

    name: str
    fn: Callable[[Mapping[str, np.ndarray]], np.ndarray]


@dataclass
class SdpProblem:
    """Maximize a linear objective subject to LMI constraints ``F(x) <= 0``."""

    variables: Sequence[Variable]
    constraints: Sequence[LmiConstraint]
    objective: Callable[[Mapping[str, np.ndarray]], float] | None = None

    def __post_init__(self):
        if not self.variables:
            raise ValueError("an SDP needs at least one variable")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        if not self.constraints:
            raise ValueError("an SDP needs at least one constraint")
        self._compiled = None

    @property
    def num_scalars(self) -> int:
        return sum(v.size for v in self.variables)

    def zero_assignment(self) -> dict:
        return {v.name: v.zeros() for v in self.variables}

    def unit_assignments(self):
        """Yield assignments with a single coordinate set to one."""
        for var in self.variables:
            for e in var.basis():
                vals = self.zero_assignment()
                vals[var.name] = e
                yield vals

    def compile(self) -> "_Compiled":
        if self._compiled is None:
            self._compiled = _compile(self)
        return self._compiled

    def unpack(self, x: np.ndarray) -> dict:
        out, pos = {}, 0
        for var in self.variables:
            out[var.name] = var.unpack(x[pos : pos + var.size])
            pos += var.size
        return out

    def pack(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        for var in self.variables:
            val = np.asarray(values[var.name], dtype=float)
            if val.shape != var.shape:
                raise ValueError(
                    f"variable {var.name!r}: expected shape {var.shape}, got {val.shape}"
                )
            if var.kind == "symmetric":
                iu = np.triu_indices(var.shape[0])
                parts.append(val[iu])
            else:
                parts.append(val.reshape(-1))
        return np.concatenate(parts)

    @property
    def lmi_dimension(self) -> int:
        return sum(b.shape[0] for b in self.compile().constants)


@dataclass
class SdpSettings:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iters: int = 200


@dataclass
class SdpSolution:
    status: str
    values: dict
    objective_value: float
    max_constraint_eig: float
    gap: float
    iterations: int = 0
    x: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ResidualReport:
    """Independent audit of an assignment against a problem."""

    objective_value: float
    block_max_eigs: list
    block_min_eigs: list

    @property
    def max_constraint_eig(self) -> float:
        return max(self.block_max_eigs)


@dataclass
class _Compiled:
    c: np.ndarray  # objective for maximization
    constants: list  # F_k0
    coeffs: list  # (nv, d, d) per block


def _compile(problem: SdpProblem) -> _Compiled:
    zero = problem.zero_assignment()
    obj0 = float(problem.objective(zero)) if problem.objective else 0.0
    c = []
    if problem.objective is not None:
        for vals in problem.unit_assignments():
            c.append(float(problem.objective(vals)) - obj0)
    else:
        c = [0.0] * problem.num_scalars
    constants, coeffs = [], []
    for con in problem.constraints:
        f0 = _checked_symmetric(con.fn(zero), con.name)
        stack = np.empty((problem.num_scalars,) + f0.shape)
        for i, vals in enumerate(problem.unit_assignments()):
            fi = _checked_symmetric(con.fn(vals), con.name)
            if fi.shape != f0.shape:
                raise ValueError(f"constraint {con.name!r} changes shape")
            stack[i] = fi - f0
        constants.append(f0)
        coeffs.append(stack)
    return _Compiled(np.array(c), constants, coeffs)


def _checked_symmetric(mat, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"constraint {name!r} must produce a square matrix")
    scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0)
    asym = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
    if asym > 1e-14 * scale:
        raise ValueError(f"constraint {name!r} is not symmetric (asymmetry {asym:.3g})")
    return 0.5 * (mat + mat.T)


def check_solution(problem: SdpProblem, values: Mapping[str, np.ndarray]) -> ResidualReport:
    """Re-evaluate every constraint block directly from the problem callables."""
    for var in problem.variables:
        if np.shape(values[var.name]) != var.shape:
            raise ValueError(f"variable {var.name!r} has wrong shape")
    maxs, mins = [], []
    for con in problem.constraints:
        mat = np.atleast_2d(np.asarray(con.fn(values), dtype=float))
        ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        maxs.append(float(ev[-1]))
        mins.append(float(ev[0]))
    obj = float(problem.objective(values)) if problem.objective else 0.0
    return ResidualReport(obj, maxs, mins)


# -- cone algebra on stacked blocks ---------------------------------------


class _Cone:
    """Product of PSD cones, grouped by block size for batched linear algebra."""

    def __init__(self, sizes):
        self.sizes = list(sizes)
        groups = {}
        for k, d in enumerate(self.sizes):
            groups.setdefault(d, []).append(k)
        self.groups = sorted(groups.items())
        self.degree = sum(self.sizes)

    def stack(self, mats):
        return [np.stack([mats[k] for k in idx]) for _, idx in self.groups]

    def unstack(self, stacks):
        out = [None] * len(self.sizes)
        for (_, idx), arr in zip(self.groups, stacks):
            for j, k in enumerate(idx):
                out[k] = arr[j]
        return out

    def identity(self):
        return [np.broadcast_to(np.eye(d), (len(idx), d, d)).copy() for d, idx in self.groups]


def _T(a):
    return np.swapaxes(a, -1, -2)


def _sym(a):
    return 0.5 * (a + _T(a))


def _inner(u, v) -> float:
    return float(sum(np.sum(a * b) for a, b in zip(u, v)))


def _axpy(alpha, u, v):
    return [alpha * a + b for a, b in zip(u, v)]


def _min_eig(u) -> float:
    return min(float(np.linalg.eigvalsh(a)[..., 0].min()) for a in u)


class _Scaling:
    """Nesterov-Todd scaling: W z = r' z r, W^{-T} s = r^{-1} s r^{-T}."""

    def __init__(self, r, rinv, lam):
        self.r, self.rinv, self.lam = r, rinv, lam

    @classmethod
    def from_pair(cls, s, z):
        r, rinv, lam = [], [], []
        for sb, zb in zip(s, z):
            ls = np.linalg.cholesky(sb)
            lz = np.linalg.cholesky(zb)
            u, sv, vt = np.linalg.svd(_T(lz) @ ls)
            v = _T(vt)
            isq = 1.0 / np.sqrt(sv)
            rb = ls @ v * isq[:, None, :]
            r.append(rb)
            rinv.append((np.sqrt(sv)[:, :, None] * _T(v)) @ np.linalg.inv(ls))
            lam.append(sv)
        return cls(r, rinv, lam)

    def updated(self, ds_t, dz_t, step):
        """Scaling at the new point, computed from the scaled step."""
        r, rinv, lam = [], [], []
        for rb, rib, lb, dsb, dzb in zip(self.r, self.rinv, self.lam, ds_t, dz_t):
            diag = _diag(lb)
            st = _sym(diag + step * dsb)
            zt = _sym(diag + step * dzb)
            l1 = np.linalg.cholesky(st)
            l2 = np.linalg.cholesky(zt)
            u, sv, vt = np.linalg.svd(_T(l2) @ l1)
            v = _T(vt)
            isq = 1.0 / np.sqrt(sv)
            r.append(rb @ l1 @ v * isq[:, None, :])
            rinv.append((np.sqrt(sv)[:, :, None] * _T(v)) @ np.linalg.inv(l1) @ rib)
            lam.append(sv)
        return _Scaling(r, rinv, lam)

    def apply(self, z):  # W z
        return [_sym(_T(r) @ zb @ r) for r, zb in zip(self.r, z)]

    def apply_inv_T(self, s):  # W^{-T} s
        return [_sym(ri @ sb @ _T(ri)) for ri, sb in zip(self.rinv, s)]

    def apply_T(self, v):  # W^T v
        return [_sym(r @ vb @ _T(r)) for r, vb in zip(self.r, v)]

    def apply_inv(self, v):  # W^{-1} v
        return [_sym(_T(ri) @ vb @ ri) for ri, vb in zip(self.rinv, v)]


def _diag(lam):
    n = lam.shape[-1]
    out = np.zeros(lam.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = lam
    return out


def _lam_solve(lam, rhs):
    """Solve lam o u = rhs for u, where o is the symmetrized product."""
    out = []
    for lb, rb in zip(lam, rhs):
        denom = lb[:, :, None] + lb[:, None, :]
        out.append(2.0 * rb / denom)
    return out


def _sprod(u, v):
    return [_sym(a @ b) for a, b in zip(u, v)]


def _max_step(lam, du) -> float:
    """Largest t with lam + t du PSD (inf if unbounded)."""
    worst = 0.0
    for lb, db in zip(lam, du):
        isq = 1.0 / np.sqrt(lb)
        m = isq[:, :, None] * db * isq[:, None, :]
        worst = max(worst, float(-np.linalg.eigvalsh(_sym(m))[..., 0].min()))
    return np.inf if worst <= 0 else 1.0 / worst


class _Operator:
    """The map x -> G x = sum_i x_i F_i and its adjoint, on stacked blocks."""

    def __init__(self, cone: _Cone, coeffs, reduce: np.ndarray):
        self.cone = cone
        self.nv = reduce.shape[1]
        self.F = []  # per group: (nb, nv, d, d)
        self.flat = []  # per group: (nv, nb*d*d)
        for d, idx in cone.groups:
            arr = np.einsum("kvij,vr->krij", np.stack([coeffs[k] for k in idx], axis=0), reduce)
            self.F.append(arr)
            self.flat.append(np.ascontiguousarray(np.swapaxes(arr, 0, 1).reshape(self.nv, -1)))

    def __call__(self, x):
        return [(x @ fl).reshape(f.shape[0], f.shape[2], f.shape[3]) for fl, f in zip(self.flat, self.F)]

    def adjoint(self, z):
        return sum(fl @ zb.reshape(-1) for fl, zb in zip(self.flat, z))

    def scaled_columns(self, scaling: _Scaling | None) -> np.ndarray:
        """Rows of r^{-1} F_i r^{-T}, flattened; its Gram matrix is G'(W'W)^{-1}G."""
        parts = []
        for g, f in enumerate(self.F):
            if scaling is None:
                fs = f
            else:
                ri = scaling.rinv[g][:, None]
                fs = ri @ f @ _T(ri)
            parts.append(np.swapaxes(fs, 0, 1).reshape(self.nv, -1))
        return np.concatenate(parts, axis=1)


class _Kkt:
    """Solves [[0, G'], [G, -W'W]] [x; z] = [bx; bz] with iterative refinement."""

    refine = 2

    def __init__(self, op: _Operator, scaling: _Scaling | None):
        self.op, self.scaling = op, scaling
        cols = op.scaled_columns(scaling)
        # R'R = G'(W'W)^{-1}G without squaring the condition number
        self.rfac = np.linalg.qr(cols.T, mode="r")
        diag = np.abs(np.diag(self.rfac))
        if diag.min() <= 1e-13 * diag.max():
            raise np.linalg.LinAlgError("rank-deficient constraint map")

    def _wtw(self, v):
        return v if self.scaling is None else self.scaling.apply_T(self.scaling.apply(v))

    def _wtw_inv(self, v):
        return v if self.scaling is None else self.scaling.apply_inv(self.scaling.apply_inv_T(v))

    def _hsolve(self, b):
        y = solve_triangular(self.rfac, b, trans="T")
        return solve_triangular(self.rfac, y)

    def _solve_once(self, bx, bz):
        x = self._hsolve(bx + self.op.adjoint(self._wtw_inv(bz)))
        z = self._wtw_inv([a - b for a, b in zip(self.op(x), bz)])
        return x, z

    def solve(self, bx, bz):
        x, z = self._solve_once(bx, bz)
        for _ in range(self.refine):
            ex = bx - self.op.adjoint(z)
            ez = [b - (gx - wz) for b, gx, wz in zip(bz, self.op(x), self._wtw(z))]
            dx, dz = self._solve_once(ex, ez)
            x = x + dx
            z = [a + b for a, b in zip(z, dz)]
        return x, z


def solve(problem: SdpProblem, settings: SdpSettings | None = None) -> SdpSolution:
    """Solve ``problem`` and audit the result with :func:`check_solution`.

    The returned status is ``optimal`` only when the recomputed largest
    constraint eigenvalue is below ``feas_tol`` and the relative duality gap
    is below ``gap_tol``.
    """
    settings = settings or SdpSettings()
    comp = problem.compile()
    nv = problem.num_scalars
    cone = _Cone([f.shape[0] for f in comp.constants])

    reduce = _reduction(comp.coeffs, comp.c, nv)
    if reduce is None:
        # the objective moves along a direction the constraints cannot see
        return _finish(problem, UNBOUNDED, np.zeros(nv), np.inf, 0)

    op = _Operator(cone, comp.coeffs, reduce)
    c = -(reduce.T @ comp.c)  # minimization form
    h = cone.stack([-f0 for f0 in comp.constants])

    try:
        x, status, gap, iters = _hsd(op, c, h, cone, settings, problem, reduce)
    except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as exc:
        log.debug("interior point breakdown: %s", exc)
        return _finish(problem, NUMERICAL_FAILURE, np.zeros(nv), np.inf, 0)
    return _finish(problem, status, reduce @ x, gap, iters)


def _reduction(coeffs, c: np.ndarray, nv: int) -> np.ndarray | None:
    """Map from reduced to full variables, ``x = T y``, or None if unbounded.

    Columns are first scaled to unit norm, then restricted to the row space
    of the constraint map so that variables the constraints do not determine
    (e.g. gain directions annihilated by a constant input matrix) drop out.
    """
    flat = np.concatenate([f.reshape(nv, -1) for f in coeffs], axis=1)
    col_norm = np.linalg.norm(flat, axis=1)
    if np.any(c[col_norm == 0] != 0):
        return None
    scale = np.where(col_norm > 0, 1.0 / np.where(col_norm > 0, col_norm, 1.0), 0.0)
    u, sv, _ = np.linalg.svd(scale[:, None] * flat, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0])) if sv.size and sv[0] > 0 else 0
    basis = u[:, :rank]
    cs = scale * c
    if np.linalg.norm(cs - basis @ (basis.T @ cs)) > 1e-12 * max(1.0, np.linalg.norm(cs)):
        return None
    return scale[:, None] * basis


def _finish(problem, status, x, gap, iters) -> SdpSolution:
    values = problem.unpack(x)
    report = check_solution(problem, values)
    return SdpSolution(
        status=status,
        values=values,
        objective_value=report.objective_value,
        max_constraint_eig=report.max_constraint_eig,
        gap=float(gap),
        iterations=iters,
        x=x,
    )


def _hsd(op, c, h, cone, settings, problem, reduce):
    feas_tol, gap_tol = settings.feas_tol, settings.gap_tol
    nrm_h = max(1.0, np.sqrt(_inner(h, h)))
    nrm_c = max(1.0, float(np.linalg.norm(c)))
    m = cone.degree

    # initial point from least-squares solves with W = I
    kkt = _Kkt(op, None)
    x, u = kkt.solve(np.zeros(op.nv), h)
    s = [-a for a in u]
    _, z = kkt.solve(-c, [np.zeros_like(a) for a in h])
    ident = cone.identity()
    for vec in (s, z):
        a = -_min_eig(vec)
        if a >= -1e-8 * max(1.0, np.sqrt(_inner(vec, vec))):
            vec[:] = _axpy(1.0 + a, ident, vec)
    tau, kappa = 1.0, 1.0
    scaling = _Scaling.from_pair(s, z)

    gap = np.inf
    best = None
    merit_best, cert_best, stalled = np.inf, np.inf, 0
    for it in range(settings.max_iters + 1):
        gx = op(x)
        rx = op.adjoint(z) + c * tau
        rz = [a + b - tau * hb for a, b, hb in zip(gx, s, h)]
        cx, hz = float(c @ x), _inner(h, z)
        rt = cx + hz + kappa
        sz = _inner(s, z)
        mu = (sz + tau * kappa) / (m + 1)

        # residuals relative to the size of the terms that produce them
        aty = op.adjoint(z)
        pres = np.sqrt(_inner(rz, rz)) / max(tau * nrm_h, np.sqrt(_inner(gx, gx)), np.sqrt(_inner(s, s)))
        dres = float(np.linalg.norm(rx)) / max(tau * nrm_c, float(np.linalg.norm(aty)))
        pcost, dcost = cx / tau, -hz / tau
        gap = (sz / tau**2) / max(1.0, min(abs(pcost), abs(dcost)))
        log.debug("it %d pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e", it, pres, dres, gap, tau, kappa)
        if pres <= feas_tol and dres <= feas_tol and gap <= gap_tol:
            xs = x / tau
            full = reduce @ xs
            if check_solution(problem, problem.unpack(full)).max_constraint_eig <= feas_tol:
                return xs, OPTIMAL, gap, it
            if best is None:
                best = (xs, gap, it)
        # infeasibility certificates
        pinf = dinf = np.inf
        if hz < 0:
            pinf = float(np.linalg.norm(aty)) / nrm_c / (-hz)
            if pinf <= feas_tol:
                return x / tau, INFEASIBLE, gap, it
        if cx < 0:
            dinf = np.sqrt(_inner(_axpy(1.0, gx, s), _axpy(1.0, gx, s))) / nrm_h / (-cx)
            if dinf <= feas_tol:
                return x / tau, UNBOUNDED, gap, it
        # progress towards either an optimum or a certificate
        merit, cert = max(pres, dres, gap), min(pinf, dinf)
        if merit < 0.5 * merit_best or cert < 0.5 * cert_best:
            merit_best, cert_best, stalled = min(merit, merit_best), min(cert, cert_best), 0
        else:
            stalled += 1
            if stalled >= 8:
                log.debug("no progress for %d iterations", stalled)
                break
        if it == settings.max_iters:
            break

        kkt = _Kkt(op, scaling)
        lam = scaling.lam
        lam_sq = [lb**2 for lb in lam]
        # (c, h) column for tau elimination
        x1, z1 = kkt.solve(-c, h)
        denom_base = float(c @ x1) + _inner(h, z1)

        def newton(eta, ds_rhs, dk):
            """ds_rhs is the complementarity rhs in scaled space (lam o u = ds_rhs)."""
            uu = _lam_solve(lam, ds_rhs)
            bx = -eta * rx
            bz = [-eta * a - b for a, b in zip(rz, scaling.apply_T(uu))]
            bt = -eta * rt - dk / tau
            x2, z2 = kkt.solve(bx, bz)
            dtau = (bt - float(c @ x2) - _inner(h, z2)) / (denom_base - kappa / tau)
            dx = x2 + dtau * x1
            dz = _axpy(dtau, z1, z2)
            dz_t = scaling.apply(dz)
            ds_t = [a - b for a, b in zip(uu, dz_t)]
            dkap = (dk - kappa * dtau) / tau
            return dx, dz, dz_t, ds_t, dtau, dkap

        def steplen(ds_t, dz_t, dtau, dkap):
            t = min(_max_step(lam, ds_t), _max_step(lam, dz_t))
            if dtau < 0:
                t = min(t, -tau / dtau)
            if dkap < 0:
                t = min(t, -kappa / dkap)
            return t

        aff = newton(1.0, [-_diag(l2) for l2 in lam_sq], -tau * kappa)
        t_aff = min(1.0, steplen(aff[3], aff[2], aff[4], aff[5]))
        sigma = (1.0 - t_aff) ** 3
        corr = _sprod(aff[3], aff[2])
        ds_rhs = [
            -_diag(l2) + sigma * mu * np.eye(l2.shape[-1]) - cb for l2, cb in zip(lam_sq, corr)
        ]
        dk = -tau * kappa + sigma * mu - aff[4] * aff[5]
        dx, dz, dz_t, ds_t, dtau, dkap = newton(1.0 - sigma, ds_rhs, dk)
        t = min(1.0, 0.99 * steplen(ds_t, dz_t, dtau, dkap))
        if not np.isfinite(t) or t < 1e-12:
            break

        x = x + t * dx
        z = _axpy(t, dz, z)
        s = _axpy(t, scaling.apply_T(ds_t), s)
        tau += t * dtau
        kappa += t * dkap
        scaling = scaling.updated(ds_t, dz_t, t)
        # keep s, z consistent with the scaling to limit drift
        s = [_sym(r @ _diag(lb) @ _T(r)) for r, lb in zip(scaling.r, scaling.lam)]
        z = [_sym(_T(ri) @ _diag(lb) @ ri) for ri, lb in zip(scaling.rinv, scaling.lam)]

    if best is not None:
        xs, g, itb = best
        return xs, MAX_ITERATIONS, g, itb
    return x / tau, MAX_ITERATIONS, gap, settings.max_iters
