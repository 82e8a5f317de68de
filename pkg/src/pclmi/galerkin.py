"""Galerkin projection of an uncertain linear system onto a PC basis.

The state is expanded as x(t, delta) = sum_i x_i(t) phi_i(delta) and the
coefficients are stacked as x_pc = vec([x_0 ... x_N]), i.e. block i of x_pc
is x_i. With Phi_n = Phi kron I_n every projected operator has the form
E[(Phi Phi^T) kron M(delta)], whose (i, j) block is E[phi_i phi_j M(delta)].
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .params_basis import PCBasis, quadrature
from .sysmodel import CostWeights, MatrixPolynomial, UncertainLinearSystem


@dataclass(frozen=True)
class GalerkinOperators:
    basis: PCBasis
    n: int
    m: int
    G: np.ndarray
    Gm: np.ndarray
    Abar: np.ndarray
    Bbar: np.ndarray
    Apc: np.ndarray
    Qbar: np.ndarray | None = None
    Rbar: np.ndarray | None = None
    system: UncertainLinearSystem | None = None
    weights: CostWeights | None = None

    @property
    def blocks(self) -> int:
        return self.basis.size

    @property
    def norms_sq(self) -> np.ndarray:
        return self.basis.norms_sq


def gram(basis: PCBasis, n: int) -> np.ndarray:
    """E[Phi_n Phi_n^T] = diag(h_i^2) kron I_n, assembled from the norms."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.kron(np.diag(basis.norms_sq), np.eye(n))


def moment_matrix(basis: PCBasis, exponents) -> np.ndarray:
    """E[delta^e Phi Phi^T] by a Gauss rule exact for this integrand."""
    exps = tuple(int(e) for e in exponents)
    if len(exps) != basis.space.dims:
        raise ValueError("exponent tuple does not match the parameter dimension")
    if not any(exps):
        return np.diag(basis.norms_sq)  # orthogonality, exactly
    # per-dimension degree of phi_i phi_j delta^e is at most 2p + e_k
    need = max((ceil((2 * basis.order + e + 1) / 2) for e in exps), default=1)
    rule = basis.rule if basis.rule.level >= need else quadrature(basis.space, need)
    vals = basis.evaluate(rule.nodes)
    mono = np.prod(rule.nodes ** np.array(exps, dtype=float), axis=1) if exps else np.ones(len(rule))
    return (vals * (rule.weights * mono)[:, None]).T @ vals


def project_matrix(poly: MatrixPolynomial, basis: PCBasis) -> np.ndarray:
    """E[(Phi Phi^T) kron poly(delta)] = sum_e M_e kron coeff_e."""
    if poly.dims is not None and poly.dims != basis.space.dims:
        raise ValueError(
            f"polynomial has {poly.dims} parameters, basis has {basis.space.dims}"
        )
    size = basis.size
    out = np.zeros((size * poly.rows, size * poly.cols))
    for exps, coeff in poly.terms:
        out += np.kron(moment_matrix(basis, exps), coeff)
    return out


def pc_dynamics(
    system: UncertainLinearSystem,
    basis: PCBasis,
    weights: CostWeights | None = None,
) -> GalerkinOperators:
    """Projected operators and the coefficient dynamics x_pc' = Apc x_pc."""
    if system.space.dims != basis.space.dims:
        raise ValueError("system and basis use different parameter spaces")
    n, m = system.n, system.m
    h = basis.norms_sq
    Abar = project_matrix(system.A, basis)
    Bbar = project_matrix(system.B, basis)
    # G is diagonal, so G^{-1} Abar just rescales block rows
    Apc = np.repeat(1.0 / h, n)[:, None] * Abar
    Qbar = Rbar = None
    if weights is not None:
        Qbar = np.kron(np.diag(h), weights.Q)
        Rbar = np.kron(np.diag(h), weights.R)
    return GalerkinOperators(
        basis=basis,
        n=n,
        m=m,
        G=gram(basis, n),
        Gm=gram(basis, m),
        Abar=Abar,
        Bbar=Bbar,
        Apc=Apc,
        Qbar=Qbar,
        Rbar=Rbar,
        system=system,
        weights=weights,
    )


def closed_loop(ops: GalerkinOperators, K) -> GalerkinOperators:
    """Operators of the closed loop A(delta) + B(delta) K, re-projected."""
    if ops.system is None:
        raise ValueError("operators carry no system to close the loop on")
    system = ops.system.with_A(ops.system.closed_loop(K))
    return pc_dynamics(system, ops.basis, ops.weights)


def block_kron(blocks: int, M) -> np.ndarray:
    """I_{N+1} kron M."""
    return np.kron(np.eye(blocks), np.atleast_2d(M))


def stacked_basis(basis: PCBasis, point, n: int) -> np.ndarray:
    """Phi_n(delta) = Phi(delta) kron I_n, an n(N+1) x n matrix."""
    phi = basis.evaluate(np.reshape(point, (1, -1)) if basis.space.dims else np.zeros((1, 0)))[0]
    return np.kron(phi[:, None], np.eye(n))
