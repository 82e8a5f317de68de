"""EMS-stability analysis and state-feedback synthesis in the PC framework.

All conditions are imposed on the small matrices P (n x n), Y (n x n) and
W (m x n); the I_{N+1} kron (.) structure is applied while assembling the
projected LMIs. Certificates are for the order-p truncated dynamics.

The helpers ``_analysis``, ``_feasible_synthesis`` and ``_optimal_synthesis``
take lists of block builders, so the Monte-Carlo formulations reuse them
with one block per sample.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh

from . import sdp
from .galerkin import GalerkinOperators, block_kron, closed_loop

log = logging.getLogger(__name__)

MARGIN = 1e-8


class SolverFailure(RuntimeError):
    """The SDP solver stopped without an optimal or infeasible verdict."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class RecertificationError(RuntimeError):
    """A synthesized gain failed its independent closed-loop check."""


@dataclass
class StabilityCertificate:
    P: np.ndarray
    alpha: float
    kappa: float
    residual: float
    method: str = "pc"
    size: int = 0  # PC order or number of samples
    problem_size: int = 0
    solve_seconds: float = 0.0


@dataclass
class SynthesisResult:
    K: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    P: np.ndarray
    p_star_norm: float
    alpha: float | None = None
    objective: float | None = None
    certified_alpha: float | None = None
    certificate: StabilityCertificate | None = None
    method: str = "pc"
    size: int = 0
    problem_size: int = 0
    solve_seconds: float = 0.0
    residual: float = 0.0
    extras: dict = field(default_factory=dict)


def _symmetrized(mat: np.ndarray) -> np.ndarray:
    asym = np.max(np.abs(mat - mat.T), initial=0.0)
    assert asym <= 1e-13 * max(1.0, np.max(np.abs(mat), initial=0.0)), asym
    return 0.5 * (mat + mat.T)


def _margin(scale: float) -> float:
    return MARGIN * max(1.0, scale)


def _shifted(mat: np.ndarray, eps: float) -> np.ndarray:
    return mat + eps * np.eye(mat.shape[0])


def _run(problem: sdp.SdpProblem, settings) -> tuple[sdp.SdpSolution, float]:
    start = time.perf_counter()
    sol = sdp.solve(problem, settings)
    return sol, time.perf_counter() - start


def _problem_size(problem: sdp.SdpProblem) -> int:
    return problem.num_scalars + problem.lmi_dimension


# -- shared formulations ----------------------------------------------------


def _analysis(
    n: int,
    blocks: Sequence[Callable[[np.ndarray], np.ndarray]],
    scale: float,
    alpha: float,
    settings,
    method: str,
    size: int,
) -> StabilityCertificate | None:
    """min tr P  s.t.  block_k(P) <= -eps I,  P >= I.

    Each ``block_k`` maps P to the full stability LMI (decay term included).
    """
    eps = _margin(scale)
    cons = [
        sdp.LmiConstraint(f"lyapunov[{k}]", lambda v, f=f: _shifted(f(v["P"]), eps))
        for k, f in enumerate(blocks)
    ]
    cons.append(sdp.LmiConstraint("normalization", lambda v: np.eye(n) - v["P"]))
    problem = sdp.SdpProblem([sdp.Variable.symmetric("P", n)], cons, lambda v: -np.trace(v["P"]))
    sol, secs = _run(problem, settings)
    if sol.status == sdp.INFEASIBLE:
        return None
    if not sol.optimal:
        raise SolverFailure(
            f"stability SDP ended with status {sol.status} "
            f"(max eig {sol.max_constraint_eig:.3g}, gap {sol.gap:.3g})",
            sol,
        )
    P = sol.values["P"]
    ev = np.linalg.eigvalsh(P)
    residual = max(float(np.linalg.eigvalsh(f(P))[-1]) for f in blocks)
    return StabilityCertificate(
        P=P,
        alpha=float(alpha),
        kappa=float(ev[-1] / ev[0]),
        residual=residual,
        method=method,
        size=size,
        problem_size=_problem_size(problem),
        solve_seconds=secs,
    )


def _bisect(certify: Callable[[float], StabilityCertificate | None], hi: float, tol: float):
    """Largest certified rate in [0, hi] by bisection on a monotone family."""

    def attempt(alpha):
        try:
            return certify(alpha)
        except SolverFailure as exc:
            log.debug("alpha=%g treated as uncertified: %s", alpha, exc)
            return None

    best = attempt(0.0)
    if best is None:
        return None
    top = attempt(hi)
    if top is not None:
        log.warning("decay rate bracket exhausted at alpha=%g; raise the upper bound", hi)
        return top
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cert = attempt(mid)
        if cert is None:
            hi = mid
        else:
            lo, best = mid, cert
    return best


def _synthesis_problem(n: int, m: int, cons, objective):
    return sdp.SdpProblem(
        [sdp.Variable.symmetric("Y", n), sdp.Variable.matrix("W", m, n)], cons, objective
    )


def _feasible_synthesis(n, m, blocks, scale, settings):
    """min tr Y  s.t.  block_k(Y, W) <= -eps I,  Y >= I."""
    eps = _margin(scale)
    cons = [
        sdp.LmiConstraint(f"synthesis[{k}]", lambda v, f=f: _shifted(f(v["Y"], v["W"]), eps))
        for k, f in enumerate(blocks)
    ]
    cons.append(sdp.LmiConstraint("normalization", lambda v: np.eye(n) - v["Y"]))
    problem = _synthesis_problem(n, m, cons, lambda v: -np.trace(v["Y"]))
    sol, secs = _run(problem, settings)
    if sol.status == sdp.INFEASIBLE:
        return None, problem, secs
    if not sol.optimal:
        raise SolverFailure(f"synthesis SDP ended with status {sol.status}", sol)
    return sol, problem, secs


def _optimal_synthesis(n, m, blocks, settings):
    """max tr Y  s.t.  block_k(Y, W) <= 0,  Y >= eps I."""
    cons = [
        sdp.LmiConstraint(f"cost[{k}]", lambda v, f=f: f(v["Y"], v["W"]))
        for k, f in enumerate(blocks)
    ]
    cons.append(sdp.LmiConstraint("positivity", lambda v: MARGIN * np.eye(n) - v["Y"]))
    problem = _synthesis_problem(n, m, cons, lambda v: np.trace(v["Y"]))
    sol, secs = _run(problem, settings)
    if sol.status == sdp.INFEASIBLE:
        return None, problem, secs
    if not sol.optimal:
        raise SolverFailure(f"optimal synthesis SDP ended with status {sol.status}", sol)
    return sol, problem, secs


def _gain(Y, W):
    K = np.linalg.solve(Y.T, W.T).T  # W Y^{-1}
    P = np.linalg.inv(Y)
    return K, 0.5 * (P + P.T)


def _relaxed(settings):
    settings = settings or sdp.SdpSettings()
    return replace(settings, feas_tol=10 * settings.feas_tol)


# -- polynomial chaos formulations ------------------------------------------


def _pc_lyapunov_block(ops: GalerkinOperators, alpha: float):
    N1 = ops.blocks
    dh = np.diag(ops.norms_sq)
    Abar = ops.Abar

    def block(P):
        PP = block_kron(N1, P)
        X = PP @ Abar
        return _symmetrized(X.T + X + alpha * np.kron(dh, P))

    return block


def assess_stability(
    ops: GalerkinOperators, alpha: float, settings: sdp.SdpSettings | None = None
) -> StabilityCertificate | None:
    """Certify EMS stability of the truncated dynamics at decay rate ``alpha``.

    Returns ``None`` when the projected LMI is infeasible.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    block = _pc_lyapunov_block(ops, alpha)
    scale = np.linalg.norm(ops.Abar, 2)
    return _analysis(ops.n, [block], scale, alpha, settings, "pc", ops.basis.order)


def max_decay_rate(
    ops: GalerkinOperators,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-4,
    settings: sdp.SdpSettings | None = None,
) -> StabilityCertificate | None:
    """Largest certifiable decay rate, found by bisection.

    Returns ``None`` when the system is not certifiable even at alpha = 0.
    """
    hi = bracket[1] if bracket else 10.0 * max(np.linalg.norm(ops.Apc, 2), 1e-3)
    return _bisect(lambda a: assess_stability(ops, a, settings), hi, tol)


def _pc_synthesis_block(ops: GalerkinOperators, alpha: float):
    N1 = ops.blocks
    dh = np.diag(ops.norms_sq)
    Abar, Bbar = ops.Abar, ops.Bbar

    def block(Y, W):
        X = Abar @ block_kron(N1, Y) + Bbar @ block_kron(N1, W)
        return _symmetrized(X + X.T + alpha * np.kron(dh, Y))

    return block


def synthesize_feasible(
    ops: GalerkinOperators, alpha: float, settings: sdp.SdpSettings | None = None
) -> SynthesisResult | None:
    """A constant gain K = W Y^{-1} certified at decay rate ``alpha``.

    Returns ``None`` when the synthesis LMI is infeasible.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    block = _pc_synthesis_block(ops, alpha)
    scale = max(np.linalg.norm(ops.Abar, 2), np.linalg.norm(ops.Bbar, 2))
    sol, problem, secs = _feasible_synthesis(ops.n, ops.m, [block], scale, settings)
    if sol is None:
        return None
    Y, W = sol.values["Y"], sol.values["W"]
    K, P = _gain(Y, W)
    cert = assess_stability(closed_loop(ops, K), alpha, _relaxed(settings))
    if cert is None:
        raise RecertificationError(f"closed loop not certified at alpha={alpha}")
    return SynthesisResult(
        K=K,
        Y=Y,
        W=W,
        P=P,
        p_star_norm=float(np.linalg.norm(P, 2)),
        alpha=float(alpha),
        certificate=cert,
        method="pc",
        size=ops.basis.order,
        problem_size=_problem_size(problem),
        solve_seconds=secs,
        residual=sol.max_constraint_eig,
    )


def _pc_cost_block(ops: GalerkinOperators):
    if ops.Qbar is None or ops.Rbar is None:
        raise ValueError("optimal synthesis needs cost weights Q and R")
    N1, n, m = ops.blocks, ops.n, ops.m
    hinv = np.diag(1.0 / ops.norms_sq)
    Qbar_inv = np.kron(hinv, np.linalg.inv(ops.weights.Q))
    Rbar_inv = np.kron(hinv, np.linalg.inv(ops.weights.R))
    Abar, Bbar = ops.Abar, ops.Bbar
    nb, mb = n * N1, m * N1

    def block(Y, W):
        YY, WW = block_kron(N1, Y), block_kron(N1, W)
        X = Abar @ YY + Bbar @ WW
        M = np.zeros((2 * nb + mb, 2 * nb + mb))
        M[:nb, :nb] = X + X.T
        M[nb : 2 * nb, :nb] = YY
        M[:nb, nb : 2 * nb] = YY.T
        M[2 * nb :, :nb] = WW
        M[:nb, 2 * nb :] = WW.T
        M[nb : 2 * nb, nb : 2 * nb] = -Qbar_inv
        M[2 * nb :, 2 * nb :] = -Rbar_inv
        return _symmetrized(M)

    return block


def closed_loop_rate(ops_cl: GalerkinOperators, P: np.ndarray) -> float:
    """Largest alpha for which a given P satisfies the projected stability LMI."""
    N1 = ops_cl.blocks
    L = _pc_lyapunov_block(ops_cl, 0.0)(P)
    GP = np.kron(np.diag(ops_cl.norms_sq), P)
    return float(eigh(-L, GP, eigvals_only=True)[0])


def synthesize_optimal(
    ops: GalerkinOperators, settings: sdp.SdpSettings | None = None
) -> SynthesisResult | None:
    """Gain minimizing the quadratic cost bound: max tr Y over the Schur-complement LMI.

    Returns ``None`` if the order-p problem is infeasible.
    """
    block = _pc_cost_block(ops)
    sol, problem, secs = _optimal_synthesis(ops.n, ops.m, [block], settings)
    if sol is None:
        return None
    Y, W = sol.values["Y"], sol.values["W"]
    K, P = _gain(Y, W)
    ops_cl = closed_loop(ops, K)
    rate = closed_loop_rate(ops_cl, P)
    if rate <= 0:
        raise RecertificationError(f"optimal gain does not certify decay (rate {rate:.3g})")
    cert = assess_stability(ops_cl, 0.5 * rate, _relaxed(settings))
    if cert is None:
        raise RecertificationError("closed loop failed the stability SDP at half the direct rate")
    return SynthesisResult(
        K=K,
        Y=Y,
        W=W,
        P=P,
        p_star_norm=float(np.linalg.norm(P, 2)),
        objective=float(np.trace(Y)),
        certified_alpha=rate,
        certificate=cert,
        method="pc",
        size=ops.basis.order,
        problem_size=_problem_size(problem),
        solve_seconds=secs,
        residual=sol.max_constraint_eig,
    )
