"""Fixed-step RK4 integration of sampled and PC-projected linear dynamics,
moment curves, and checks of the exponential mean-square decay bound."""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .galerkin import GalerkinOperators, closed_loop
from .params_basis import PCBasis, eval_basis
from .pc_control import StabilityCertificate
from .sysmodel import UncertainLinearSystem, eval_matrices

EMPIRICAL = "empirical"
PC = "pc"


@dataclass
class Trajectory:
    times: np.ndarray  # (nt,)
    states: np.ndarray  # (nt, dim)
    truncated: bool = False


@dataclass
class TrajectoryBatch:
    """Trajectories of many samples on one grid; ``states`` is ``(S, nt, n)``."""

    times: np.ndarray
    states: np.ndarray
    truncated: np.ndarray  # (S,) bool

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, k) -> Trajectory:
        return Trajectory(self.times, self.states[k], bool(self.truncated[k]))


@dataclass
class MomentCurve:
    times: np.ndarray
    values: np.ndarray
    source: str
    stderr: np.ndarray | None = None


@dataclass
class DecayReport:
    passed: bool
    margin: float  # 1 - worst value/bound ratio
    first_violation: float | None = None


def default_dt(Apc) -> float:
    return min(1e-3, 0.01 / max(np.linalg.norm(Apc, 2), 1e-12))


def time_grid(T: float, dt: float, t0: float = 0.0):
    """Uniform grid from t0 to t0 + T; dt is shrunk if needed to divide T."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not T >= dt:
        raise ValueError("T must be >= dt")
    steps = ceil(T / dt - 1e-9)
    return t0 + (T / steps) * np.arange(steps + 1), T / steps, steps


def rk4_step_matrix(M: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for x' = M x is exactly x <- Phi x with
    Phi = I + hM + (hM)^2/2 + (hM)^3/6 + (hM)^4/24 (batched over leading axes)."""
    hM = h * np.asarray(M, dtype=float)
    eye = np.broadcast_to(np.eye(hM.shape[-1]), hM.shape)
    # Horner form of the degree-4 Taylor polynomial
    phi = eye + hM / 4.0
    phi = eye + (hM / 3.0) @ phi
    phi = eye + (hM / 2.0) @ phi
    return eye + hM @ phi


def _propagate_numpy(Phi: np.ndarray, x0: np.ndarray, steps: int, save_every: int, out: np.ndarray):
    x = x0[..., None].copy()
    out[:, 0] = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            x = Phi @ x
            if k % save_every == 0:
                out[:, k // save_every] = x[..., 0]


try:
    from ._rk4 import propagate as _propagate_compiled
except ImportError:  # extension not built
    _propagate_compiled = None

BACKEND = "compiled" if _propagate_compiled is not None else "numpy"


def _rk4(M: np.ndarray, x0: np.ndarray, h: float, steps: int, save_every: int, backend: str | None = None):
    """Batched RK4 for x' = M_s x_s. ``M`` is (S, k, k), ``x0`` is (S, k).

    Returns the saved states ``(S, steps // save_every + 1, k)`` and a flag
    per sample marking non-finite values (overflow propagates to the end).
    """
    Phi = np.ascontiguousarray(rk4_step_matrix(M, h))
    x0 = np.ascontiguousarray(x0, dtype=float)
    out = np.empty((Phi.shape[0], steps // save_every + 1, Phi.shape[1]))
    backend = backend or BACKEND
    with np.errstate(over="ignore", invalid="ignore"):
        if backend == "compiled":
            if _propagate_compiled is None:
                raise RuntimeError("compiled RK4 kernel is not available")
            _propagate_compiled(Phi, x0, int(steps), int(save_every), out)
        else:
            _propagate_numpy(Phi, x0, steps, save_every, out)
    bad = ~np.isfinite(out).all(axis=(1, 2))
    return out, bad


def _closed_loop_matrices(system: UncertainLinearSystem, K, points) -> np.ndarray:
    A = eval_matrices(system.A, points)
    if K is None:
        return A
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (system.m, system.n):
        raise ValueError(f"gain must be {system.m}x{system.n}")
    return A + eval_matrices(system.B, points) @ K


def _points(system: UncertainLinearSystem, samples) -> np.ndarray:
    pts = np.asarray(samples, dtype=float)
    d = system.space.dims
    if pts.ndim == 1:
        pts = pts.reshape(-1, d) if d else pts.reshape(-1, 0)
    if pts.shape[1] != d:
        raise ValueError(f"samples need {d} coordinates")
    return pts


def integrate_samples(
    system: UncertainLinearSystem,
    K,
    samples,
    x0,
    T: float,
    dt: float,
    save_every: int = 1,
    t0: float = 0.0,
) -> TrajectoryBatch:
    """Closed-loop (or open-loop when ``K`` is None) trajectories at each sample."""
    pts = _points(system, samples)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != system.n:
        raise ValueError(f"x0 must have {system.n} entries")
    if save_every < 1:
        raise ValueError("save_every must be >= 1")
    times, h, steps = time_grid(T, dt, t0)
    M = _closed_loop_matrices(system, K, pts)
    states, bad = _rk4(M, np.broadcast_to(x0, (len(pts), system.n)), h, steps, save_every)
    return TrajectoryBatch(times[::save_every], states, bad)


def integrate_sample(
    system: UncertainLinearSystem, K, delta, x0, T: float, dt: float, t0: float = 0.0
) -> Trajectory:
    """Single realization; on overflow the trajectory is cut at the last finite state."""
    batch = integrate_samples(system, K, np.reshape(delta, (1, -1)), x0, T, dt, t0=t0)
    traj = batch[0]
    if traj.truncated:
        finite = np.isfinite(traj.states).all(axis=1)
        last = int(np.argmin(finite)) if not finite.all() else len(finite)
        traj = Trajectory(traj.times[:last], traj.states[:last], True)
    return traj


def integrate_pc(
    ops: GalerkinOperators, K, xpc0, T: float, dt: float, t0: float = 0.0, save_every: int = 1
) -> Trajectory:
    """Integrate x_pc' = Apc x_pc, re-projecting A + BK when a gain is given."""
    Apc = ops.Apc if K is None else closed_loop(ops, K).Apc
    xpc0 = np.asarray(xpc0, dtype=float).reshape(-1)
    if xpc0.size != Apc.shape[0]:
        raise ValueError(f"xpc0 must have {Apc.shape[0]} entries")
    times, h, steps = time_grid(T, dt, t0)
    states, bad = _rk4(Apc[None], xpc0[None], h, steps, save_every)
    return Trajectory(times[::save_every], states[0], bool(bad[0]))


def pc_initial_state(x0, basis: PCBasis) -> np.ndarray:
    """Deterministic x0 as PC coefficients: block 0 holds x0, the rest is zero."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    out = np.zeros(x0.size * basis.size)
    out[: x0.size] = x0
    return out


def _blocks(xpc, basis: PCBasis) -> np.ndarray:
    """x_pc (..., n(N+1)) as (..., N+1, n): row i is the coefficient x_i."""
    xpc = np.asarray(xpc, dtype=float)
    size = basis.size
    if xpc.shape[-1] % size:
        raise ValueError(f"state length {xpc.shape[-1]} is not a multiple of {size}")
    return xpc.reshape(xpc.shape[:-1] + (size, xpc.shape[-1] // size))


def reconstruct(xpc_state, basis: PCBasis, delta) -> np.ndarray:
    """Surrogate state X Phi(delta) from stacked PC coefficients."""
    X = _blocks(xpc_state, basis)
    if X.ndim != 2:
        raise ValueError("expected a single n(N+1) state vector")
    return X.T @ eval_basis(basis, delta)


def empirical_moments(trajectories) -> MomentCurve:
    """Sample mean of ||x(t)||^2 with its standard error."""
    if isinstance(trajectories, TrajectoryBatch):
        times, states = trajectories.times, trajectories.states
    else:
        trajectories = list(trajectories)
        if not trajectories:
            raise ValueError("no trajectories")
        times = trajectories[0].times
        for tr in trajectories[1:]:
            if tr.times.shape != times.shape or np.any(tr.times != times):
                raise ValueError("trajectories do not share a time grid")
        states = np.stack([tr.states for tr in trajectories])
    sq = np.sum(states**2, axis=2)  # (S, nt)
    S = sq.shape[0]
    se = np.std(sq, axis=0, ddof=1) / np.sqrt(S) if S > 1 else np.zeros(sq.shape[1])
    return MomentCurve(times, sq.mean(axis=0), EMPIRICAL, se)


def sample_moments(
    system: UncertainLinearSystem,
    K,
    samples,
    x0,
    T: float,
    dt: float,
    save_every: int = 1,
    chunk: int = 10_000,
) -> MomentCurve:
    """Empirical second moment without keeping every trajectory in memory."""
    pts = _points(system, samples)
    total = total_sq = None
    times = None
    for start in range(0, len(pts), chunk):
        batch = integrate_samples(system, K, pts[start : start + chunk], x0, T, dt, save_every)
        sq = np.sum(batch.states**2, axis=2)
        times = batch.times
        if total is None:
            total, total_sq = sq.sum(axis=0), (sq**2).sum(axis=0)
        else:
            total += sq.sum(axis=0)
            total_sq += (sq**2).sum(axis=0)
    S = len(pts)
    mean = total / S
    var = np.maximum(total_sq / S - mean**2, 0.0) * (S / (S - 1)) if S > 1 else np.zeros_like(mean)
    return MomentCurve(times, mean, EMPIRICAL, np.sqrt(var / S))


def pc_moments(pc_traj: Trajectory, basis: PCBasis) -> MomentCurve:
    """Exact second moment of the surrogate, sum_i h_i^2 ||x_i||^2."""
    X = _blocks(pc_traj.states, basis)  # (nt, N+1, n)
    vals = np.einsum("i,tij->t", basis.norms_sq, X**2)
    return MomentCurve(pc_traj.times, vals, PC)


def pc_mean(pc_traj: Trajectory, basis: PCBasis) -> np.ndarray:
    return _blocks(pc_traj.states, basis)[:, 0, :]


def decay_bound(times, value0: float, alpha: float, kappa: float, slack: float = 0.0):
    t = np.asarray(times, dtype=float)
    return (1.0 + slack) * kappa * value0 * np.exp(-alpha * (t - t[0]))


def verify_decay(curve: MomentCurve, cert: StabilityCertificate, slack: float = 0.0) -> DecayReport:
    """Check value(t) <= (1 + slack) kappa value(t0) exp(-alpha (t - t0)) on the grid."""
    v0 = float(curve.values[0])
    if not v0 > 0:
        raise ValueError("curve must start with a positive value")
    bound = decay_bound(curve.times, v0, cert.alpha, cert.kappa, slack)
    ratio = curve.values / bound
    bad = np.flatnonzero(~(ratio <= 1.0 + 1e-12))
    first = float(curve.times[bad[0]]) if bad.size else None
    return DecayReport(bad.size == 0, float(1.0 - np.max(ratio)), first)
