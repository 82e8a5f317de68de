"""Sample-based (Monte-Carlo) stability and synthesis LMIs, and repeat studies.

Every sample contributes its own LMI block while the decision variables
(P, or Y and W) are shared. Normalizations match the PC formulations so the
two methods can be compared directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .pc_control import (
    RecertificationError,
    SolverFailure,
    StabilityCertificate,
    SynthesisResult,
    _analysis,
    _bisect,
    _feasible_synthesis,
    _gain,
    _optimal_synthesis,
    _problem_size,
    _symmetrized,
)
from .sysmodel import CostWeights, UncertainLinearSystem, eval_matrices, sample_parameters

log = logging.getLogger(__name__)

FLAG_FAILURE_FRACTION = 0.2


def _sample_matrices(system: UncertainLinearSystem, samples):
    pts = np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, system.space.dims) if system.space.dims else pts.reshape(-1, 0)
    if pts.shape[0] < 1:
        raise ValueError("at least one sample is required")
    if pts.shape[1] != system.space.dims:
        raise ValueError(f"samples need {system.space.dims} coordinates, got {pts.shape[1]}")
    return eval_matrices(system.A, pts), eval_matrices(system.B, pts)


def _scale(As, Bs=None) -> float:
    out = max(np.linalg.norm(a, 2) for a in As)
    if Bs is not None:
        out = max(out, max(np.linalg.norm(b, 2) for b in Bs))
    return out


def _stability_blocks(As, alpha):
    return [lambda P, A=A: _symmetrized(A.T @ P + P @ A + alpha * P) for A in As]


def _synthesis_blocks(As, Bs, alpha):
    def make(A, B):
        def block(Y, W):
            X = A @ Y + B @ W
            return _symmetrized(X + X.T + alpha * Y)

        return block

    return [make(A, B) for A, B in zip(As, Bs)]


def _cost_blocks(As, Bs, weights: CostWeights):
    n, m = As.shape[1], Bs.shape[2]
    Qi, Ri = np.linalg.inv(weights.Q), np.linalg.inv(weights.R)

    def make(A, B):
        def block(Y, W):
            X = A @ Y + B @ W
            M = np.zeros((2 * n + m, 2 * n + m))
            M[:n, :n] = X + X.T
            M[n : 2 * n, :n] = Y
            M[:n, n : 2 * n] = Y.T
            M[2 * n :, :n] = W
            M[:n, 2 * n :] = W.T
            M[n : 2 * n, n : 2 * n] = -Qi
            M[2 * n :, 2 * n :] = -Ri
            return _symmetrized(M)

        return block

    return [make(A, B) for A, B in zip(As, Bs)]


def mc_assess_stability(
    system: UncertainLinearSystem, samples, alpha: float, settings: sdp.SdpSettings | None = None
) -> StabilityCertificate | None:
    """One shared P certifying decay rate ``alpha`` at every sample, or ``None``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    As, _ = _sample_matrices(system, samples)
    return _analysis(system.n, _stability_blocks(As, alpha), _scale(As), alpha, settings, "mc", len(As))


def mc_max_decay_rate(
    system: UncertainLinearSystem,
    samples,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-4,
    settings: sdp.SdpSettings | None = None,
) -> StabilityCertificate | None:
    As, _ = _sample_matrices(system, samples)
    hi = bracket[1] if bracket else 10.0 * max(_scale(As), 1e-3)
    return _bisect(lambda a: mc_assess_stability(system, samples, a, settings), hi, tol)


def _recertify(blocks, Y, K, tol):
    """Largest eigenvalue of each sample LMI with W replaced by K Y."""
    worst = max(float(np.linalg.eigvalsh(f(Y, K @ Y))[-1]) for f in blocks)
    if worst > tol:
        raise RecertificationError(f"sample LMI violated by {worst:.3g} (tolerance {tol:.3g})")
    return worst


def mc_synthesize_feasible(
    system: UncertainLinearSystem, samples, alpha: float, settings: sdp.SdpSettings | None = None
) -> SynthesisResult | None:
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    settings = settings or sdp.SdpSettings()
    As, Bs = _sample_matrices(system, samples)
    blocks = _synthesis_blocks(As, Bs, alpha)
    sol, problem, secs = _feasible_synthesis(system.n, system.m, blocks, _scale(As, Bs), settings)
    if sol is None:
        return None
    Y, W = sol.values["Y"], sol.values["W"]
    K, P = _gain(Y, W)
    residual = _recertify(blocks, Y, K, 10 * settings.feas_tol)
    return SynthesisResult(
        K=K,
        Y=Y,
        W=W,
        P=P,
        p_star_norm=float(np.linalg.norm(P, 2)),
        alpha=float(alpha),
        method="mc",
        size=len(As),
        problem_size=_problem_size(problem),
        solve_seconds=secs,
        residual=residual,
    )


def mc_synthesize_optimal(
    system: UncertainLinearSystem,
    samples,
    weights: CostWeights,
    settings: sdp.SdpSettings | None = None,
) -> SynthesisResult | None:
    """max tr Y subject to one Schur-complement cost LMI per sample."""
    if weights is None:
        raise ValueError("optimal synthesis needs cost weights Q and R")
    settings = settings or sdp.SdpSettings()
    As, Bs = _sample_matrices(system, samples)
    blocks = _cost_blocks(As, Bs, weights)
    sol, problem, secs = _optimal_synthesis(system.n, system.m, blocks, settings)
    if sol is None:
        return None
    Y, W = sol.values["Y"], sol.values["W"]
    K, P = _gain(Y, W)
    residual = _recertify(blocks, Y, K, 10 * settings.feas_tol)
    return SynthesisResult(
        K=K,
        Y=Y,
        W=W,
        P=P,
        p_star_norm=float(np.linalg.norm(P, 2)),
        objective=float(np.trace(Y)),
        method="mc",
        size=len(As),
        problem_size=_problem_size(problem),
        solve_seconds=secs,
        residual=residual,
    )


def sub_seed(seed: int, samples: int, repeat: int) -> int:
    """Deterministic child seed for one (S, repeat) cell."""
    return int(np.random.SeedSequence([seed, samples, repeat]).generate_state(1)[0])


@dataclass
class McRun:
    samples: int
    repeat: int
    seed: int
    p_star_norm: float | None
    solve_seconds: float
    problem_size: int = 0
    error: str | None = None


@dataclass
class McCell:
    samples: int
    mean: float
    stddev: float
    successes: int
    failures: int

    @property
    def flagged(self) -> bool:
        total = self.successes + self.failures
        return total > 0 and self.failures > FLAG_FAILURE_FRACTION * total


@dataclass
class McStudyReport:
    sample_sizes: list
    repeats: int
    seed: int
    runs: list = field(default_factory=list)
    cells: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(c.failures for c in self.cells)


def _summarize(size: int, runs) -> McCell:
    vals = np.array([r.p_star_norm for r in runs if r.p_star_norm is not None])
    fails = sum(r.p_star_norm is None for r in runs)
    if vals.size == 0:
        return McCell(size, float("nan"), float("nan"), 0, fails)
    # identical values give exactly zero spread (np.std can leave rounding residue)
    std = float(np.std(vals, ddof=1)) if vals.size > 1 and np.ptp(vals) > 0 else 0.0
    return McCell(size, float(np.mean(vals)), std, int(vals.size), fails)


def repeat_study(
    system: UncertainLinearSystem,
    weights: CostWeights,
    sample_sizes,
    repeats: int,
    seed: int,
    settings: sdp.SdpSettings | None = None,
) -> McStudyReport:
    """Mean and sample standard deviation of ||P*|| over repeated fresh draws."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    sizes = [int(s) for s in sample_sizes]
    if any(s < 1 for s in sizes):
        raise ValueError("sample sizes must be >= 1")
    report = McStudyReport(sizes, repeats, seed)
    for size in sizes:
        runs = []
        for r in range(repeats):
            child = sub_seed(seed, size, r)
            samples = sample_parameters(system.space, size, child)
            try:
                res = mc_synthesize_optimal(system, samples, weights, settings)
            except (SolverFailure, RecertificationError) as exc:
                log.warning("S=%d repeat %d failed: %s", size, r, exc)
                runs.append(McRun(size, r, child, None, 0.0, error=str(exc)))
                continue
            if res is None:
                runs.append(McRun(size, r, child, None, 0.0, error="infeasible"))
                continue
            runs.append(McRun(size, r, child, res.p_star_norm, res.solve_seconds, res.problem_size))
        cell = _summarize(size, runs)
        if cell.flagged:
            log.warning("S=%d: %d of %d repeats failed", size, cell.failures, repeats)
        report.runs.extend(runs)
        report.cells.append(cell)
    return report
