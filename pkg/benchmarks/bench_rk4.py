"""Compare the compiled and numpy RK4 backends on the F-16 closed loop.

    python3 benchmarks/bench_rk4.py [--samples 200] [--horizon 10]
"""

import argparse
import time

import numpy as np

from pclmi import simulate
from pclmi.galerkin import closed_loop, pc_dynamics
from pclmi.params_basis import build_basis
from pclmi.pc_control import synthesize_optimal
from pclmi.sysmodel import bundled_model, eval_matrices, load_system, sample_parameters


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--order", type=int, default=3)
    args = ap.parse_args()

    system, weights = load_system(bundled_model("f16"))
    ops = pc_dynamics(system, build_basis(system.space, args.order), weights)
    K = synthesize_optimal(ops).K
    pts = sample_parameters(system.space, args.samples, 0)
    M = eval_matrices(system.A, pts) + eval_matrices(system.B, pts) @ K
    dt = simulate.default_dt(closed_loop(ops, K).Apc)
    _, h, steps = simulate.time_grid(args.horizon, dt)
    x0 = np.ones((len(pts), system.n))

    results = {}
    for backend in ("compiled", "numpy"):
        if backend == "compiled" and simulate.BACKEND != "compiled":
            print("compiled backend not built; skipping")
            continue
        start = time.perf_counter()
        out, _ = simulate._rk4(M, x0, h, steps, 100, backend=backend)
        results[backend] = out
        print(f"{backend:9s} {time.perf_counter() - start:8.3f} s  ({args.samples} samples, {steps} steps)")
    if len(results) == 2:
        diff = np.max(np.abs(results["compiled"] - results["numpy"]) / (1 + np.abs(results["numpy"])))
        print(f"max relative difference {diff:.2e}")


if __name__ == "__main__":
    main()
