"""Independent reference computations shared by the tests."""

import numpy as np
from scipy.linalg import eig

from pclmi.galerkin import pc_dynamics
from pclmi.params_basis import ParameterSpace, build_basis
from pclmi.sysmodel import MatrixPolynomial, UncertainLinearSystem, bundled_model, load_system


def riccati_oracle(A, B, Q, R):
    """Stabilizing CARE solution from the stable invariant subspace of the Hamiltonian."""
    n = A.shape[0]
    Ri = np.linalg.inv(R)
    H = np.block([[A, -B @ Ri @ B.T], [-Q, -A.T]])
    w, V = eig(H)
    stable = V[:, w.real < 0]
    assert stable.shape[1] == n
    U1, U2 = stable[:n], stable[n:]
    P = np.real(U2 @ np.linalg.inv(U1))
    P = 0.5 * (P + P.T)
    return P, -Ri @ B.T @ P


def random_stable_system(rng, n, m):
    A = rng.normal(size=(n, n))
    shift = max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.5)
    A = A - shift * np.eye(n)
    B = rng.normal(size=(n, m))
    L = rng.normal(size=(n, n))
    Q = L @ L.T + 0.5 * np.eye(n)
    Lr = rng.normal(size=(m, m))
    R = Lr @ Lr.T + 0.5 * np.eye(m)
    return A, B, Q, R


def deterministic_system(A, B) -> UncertainLinearSystem:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    return UncertainLinearSystem(
        A.shape[0], B.shape[1], ParameterSpace(()), MatrixPolynomial.constant(A), MatrixPolynomial.constant(B)
    )


def model(name):
    return load_system(bundled_model(name))


def ops_for(name, order, with_weights=True):
    system, weights = model(name)
    return pc_dynamics(system, build_basis(system.space, order), weights if with_weights else None)

