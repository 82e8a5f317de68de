"""Command-line interface: ``pclmi {analyze,synthesize,convergence,simulate}``.

Exit codes: 0 success or feasible, 2 certified infeasible (or a decay bound
that simulation contradicts), 1 operational error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .galerkin import closed_loop, pc_dynamics
from .mc_control import (
    mc_assess_stability,
    mc_max_decay_rate,
    mc_synthesize_feasible,
    mc_synthesize_optimal,
    repeat_study,
)
from .params_basis import build_basis
from .pc_control import (
    RecertificationError,
    SolverFailure,
    assess_stability,
    max_decay_rate,
    synthesize_feasible,
    synthesize_optimal,
)
from .sdp import SdpSettings
from .simulate import (
    decay_bound,
    default_dt,
    integrate_pc,
    pc_initial_state,
    pc_moments,
    sample_moments,
    verify_decay,
)
from .sysmodel import MODELS_DIR, load_system, sample_parameters

log = logging.getLogger("pclmi")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
NORM = "spectral"


class UsageError(Exception):
    pass


# -- argument parsing -------------------------------------------------------


def _int_range(text: str) -> list:
    """'1..10', '3' or '1,2,5'."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _common(p: argparse.ArgumentParser, mc: bool = True):
    p.add_argument("system", help="system JSON file (or the name of a bundled model)")
    p.add_argument("--order", type=int, default=3, help="PC total degree p (default 3)")
    if mc:
        p.add_argument("--mc", action="store_true", help="use the sampled formulation")
        p.add_argument("--samples", type=int, default=100, help="number of MC samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-7, help="SDP feasibility and gap tolerance")
    p.add_argument("--alpha-tol", type=float, default=1e-4, help="bisection width on alpha")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pclmi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="EMS-stability certificate or maximum decay rate")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, default=None)
    g.add_argument("--max-alpha", action="store_true")
    p.add_argument("--alpha-max", type=float, default=None, help="upper end of the bisection bracket")

    p = sub.add_parser("synthesize", help="state-feedback gain")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--alpha", type=float, default=None, help="feasible gain at this decay rate")
    g.add_argument("--optimal", action="store_true", help="cost-optimal gain (needs Q and R)")

    p = sub.add_parser("convergence", help="||P*|| versus PC order and MC sample size")
    _common(p, mc=False)
    p.add_argument("--orders", type=_int_range, default=_int_range("1..10"))
    p.add_argument("--sizes", type=_int_range, default=_int_range("5,10,50,100,200"))
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--no-timing", action="store_true", help="leave solve_seconds empty")

    p = sub.add_parser("simulate", help="moment curves and the certified decay bound")
    _common(p, mc=False)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--gain", type=Path, help="gain.json from synthesize")
    g.add_argument("--open-loop", action="store_true")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--horizon", "-T", type=float, default=10.0, dest="horizon")
    p.add_argument("--dt", type=float, default=None, help="step (default min(1e-3, 0.01/||Apc||))")
    p.add_argument("--x0", type=_float_list, default=None, help="initial state (default all ones)")
    p.add_argument("--slack", type=float, default=0.1)
    p.add_argument("--points", type=int, default=1000, help="approximate rows in moments.csv")
    return parser


def _validate(args):
    if getattr(args, "order", 0) < 0:
        raise UsageError("--order must be >= 0")
    if getattr(args, "samples", 1) < 1:
        raise UsageError("--samples must be >= 1")
    if getattr(args, "repeats", 1) < 1:
        raise UsageError("--repeats must be >= 1")
    if not args.tol > 0 or not args.alpha_tol > 0:
        raise UsageError("tolerances must be > 0")
    alpha = getattr(args, "alpha", None)
    if alpha is not None and alpha < 0:
        raise UsageError("--alpha must be >= 0")
    if args.command == "synthesize" and alpha is not None and alpha <= 0:
        raise UsageError("--alpha must be > 0 for synthesis")
    if args.command == "convergence":
        if not args.orders or min(args.orders) < 0:
            raise UsageError("--orders must be non-negative")
        if not args.sizes or min(args.sizes) < 1:
            raise UsageError("--sizes must be >= 1")
    if args.command == "simulate":
        if args.dt is not None and not args.dt > 0:
            raise UsageError("--dt must be > 0")
        if not args.horizon > 0:
            raise UsageError("--horizon must be > 0")
        if args.points < 1:
            raise UsageError("--points must be >= 1")


# -- helpers ----------------------------------------------------------------


def _resolve_system(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = MODELS_DIR / (name if name.endswith(".json") else f"{name}.json")
    if not path.parent.parts and bundled.exists():
        return bundled
    raise FileNotFoundError(f"system file not found: {name}")


def _config(args) -> dict:
    out = {}
    for key, val in sorted(vars(args).items()):
        if key in ("verbose",):
            continue
        out[key] = str(val) if isinstance(val, Path) else val
    return out


def _envelope(args, settings: SdpSettings, system_path: Path) -> dict:
    return {
        "tool": "pclmi",
        "version": __version__,
        "config": _config(args),
        "system_file": str(system_path),
        "seed": args.seed,
        "tolerances": {**asdict(settings), "alpha_tol": args.alpha_tol},
        "norm": NORM,
    }


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _ops(system, weights, order):
    return pc_dynamics(system, build_basis(system.space, order), weights)


def _samples(system, args):
    return sample_parameters(system.space, args.samples, args.seed)


def _scope(args) -> dict:
    if getattr(args, "mc", False):
        return {"method": "mc", "samples": args.samples}
    return {"method": "pc", "order": args.order, "scope": f"order-{args.order} truncation"}


# -- commands ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    path = _resolve_system(args.system)
    system, _ = load_system(path)
    settings = SdpSettings(feas_tol=args.tol, gap_tol=args.tol)
    if args.mc:
        samples = _samples(system, args)
        if args.max_alpha:
            bracket = (0.0, args.alpha_max) if args.alpha_max else None
            cert = mc_max_decay_rate(system, samples, bracket, args.alpha_tol, settings)
        else:
            cert = mc_assess_stability(system, samples, args.alpha or 0.0, settings)
    else:
        ops = _ops(system, None, args.order)
        if args.max_alpha:
            bracket = (0.0, args.alpha_max) if args.alpha_max else None
            cert = max_decay_rate(ops, bracket, args.alpha_tol, settings)
        else:
            cert = assess_stability(ops, args.alpha or 0.0, settings)
    doc = _envelope(args, settings, path)
    doc.update(_scope(args))
    if cert is None:
        doc.update({"feasible": False, "alpha": args.alpha})
        print("not certified: the stability LMI is infeasible")
    else:
        doc.update(
            {
                "feasible": True,
                "alpha": cert.alpha,
                "P": cert.P.tolist(),
                "kappa": cert.kappa,
                "residual": cert.residual,
                "problem_size": cert.problem_size,
            }
        )
        print(f"certified: alpha = {cert.alpha:.6g}, kappa(P) = {cert.kappa:.6g}")
    _write_json(args.out / "analysis.json", doc)
    return EXIT_OK if cert is not None else EXIT_INFEASIBLE


def cmd_synthesize(args) -> int:
    path = _resolve_system(args.system)
    system, weights = load_system(path)
    if args.optimal and weights is None:
        raise UsageError(f"{path}: optimal synthesis needs Q and R in the system file")
    settings = SdpSettings(feas_tol=args.tol, gap_tol=args.tol)
    if args.mc:
        samples = _samples(system, args)
        if args.optimal:
            res = mc_synthesize_optimal(system, samples, weights, settings)
        else:
            res = mc_synthesize_feasible(system, samples, args.alpha, settings)
    else:
        ops = _ops(system, weights, args.order)
        res = synthesize_optimal(ops, settings) if args.optimal else synthesize_feasible(ops, args.alpha, settings)
    doc = _envelope(args, settings, path)
    doc.update(_scope(args))
    if res is None:
        doc.update({"feasible": False})
        print("no gain: the synthesis LMI is infeasible")
        _write_json(args.out / "gain.json", doc)
        return EXIT_INFEASIBLE
    recert = {"passed": True, "residual": res.residual}
    if res.certificate is not None:
        recert.update({"alpha": res.certificate.alpha, "kappa": res.certificate.kappa})
    if res.certified_alpha is not None:
        recert["certified_alpha"] = res.certified_alpha
    doc.update(
        {
            "feasible": True,
            "K": res.K.tolist(),
            "Y": res.Y.tolist(),
            "W": res.W.tolist(),
            "P": res.P.tolist(),
            "p_star_norm": res.p_star_norm,
            "alpha": res.alpha,
            "objective": res.objective,
            "problem_size": res.problem_size,
            "recertification": recert,
        }
    )
    print(f"gain found: ||P*|| = {res.p_star_norm:.6g}")
    print("K =", np.array2string(res.K, precision=6))
    _write_json(args.out / "gain.json", doc)
    return EXIT_OK


def cmd_convergence(args) -> int:
    path = _resolve_system(args.system)
    system, weights = load_system(path)
    if weights is None:
        raise UsageError(f"{path}: the convergence study needs Q and R in the system file")
    settings = SdpSettings(feas_tol=args.tol, gap_tol=args.tol)
    timing = not args.no_timing

    pc_rows = []
    for p in args.orders:
        ops = _ops(system, weights, p)
        start = time.perf_counter()
        try:
            res = synthesize_optimal(ops, settings)
        except (SolverFailure, RecertificationError) as exc:
            log.warning("order %d failed: %s", p, exc)
            res = None
        secs = time.perf_counter() - start
        norm = None if res is None else res.p_star_norm
        size = res.problem_size if res is not None else ""
        pc_rows.append([p, size, _fmt(norm), _fmt(secs) if timing else ""])
        print(f"PC p={p}: ||P*|| = {norm}")
    _write_csv(args.out / "pc_sweep.csv", ["order", "problem_size", "p_star_norm", "solve_seconds"], pc_rows)

    report = repeat_study(system, weights, args.sizes, args.repeats, args.seed, settings)
    mc_rows = [
        [r.samples, r.repeat, r.seed, _fmt(r.p_star_norm), _fmt(r.solve_seconds) if timing else ""]
        for r in report.runs
    ]
    _write_csv(args.out / "mc_sweep.csv", ["samples", "repeat", "seed", "p_star_norm", "solve_seconds"], mc_rows)
    summary = [[c.samples, _fmt(c.mean), _fmt(c.stddev), c.successes, c.failures, int(c.flagged)] for c in report.cells]
    _write_csv(
        args.out / "mc_summary.csv",
        ["samples", "mean", "stddev", "successes", "failures", "flagged"],
        summary,
    )
    for c in report.cells:
        print(f"MC S={c.samples}: mean {c.mean:.6g}, stddev {c.stddev:.4g}, failures {c.failures}")

    doc = _envelope(args, settings, path)
    doc.update(
        {
            "pc": [{"order": r[0], "p_star_norm": None if r[2] == "" else float(r[2])} for r in pc_rows],
            "mc": [
                {"samples": c.samples, "mean": c.mean, "stddev": c.stddev, "failures": c.failures}
                for c in report.cells
            ],
            "sub_seeds": [[r.samples, r.repeat, r.seed] for r in report.runs],
        }
    )
    _write_json(args.out / "convergence.json", doc)
    return EXIT_OK


def _load_gain(path: Path, system):
    try:
        with path.open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"gain file not found: {path}") from exc
    if "K" not in doc:
        raise UsageError(f"{path}: no gain 'K' in file")
    K = np.array(doc["K"], dtype=float)
    if K.shape != (system.m, system.n):
        raise UsageError(f"{path}: gain must be {system.m}x{system.n}")
    return K


def cmd_simulate(args) -> int:
    path = _resolve_system(args.system)
    system, weights = load_system(path)
    K = None if args.open_loop else _load_gain(args.gain, system)
    x0 = np.ones(system.n) if args.x0 is None else np.asarray(args.x0)
    if x0.size != system.n:
        raise UsageError(f"--x0 needs {system.n} entries")
    settings = SdpSettings(feas_tol=args.tol, gap_tol=args.tol)

    ops = _ops(system, weights, args.order)
    ops_cl = ops if K is None else closed_loop(ops, K)
    dt = args.dt or default_dt(ops_cl.Apc)
    steps = int(np.ceil(args.horizon / dt - 1e-9))
    every = max(1, steps // args.points)

    samples = sample_parameters(system.space, args.samples, args.seed)
    emp = sample_moments(system, K, samples, x0, args.horizon, dt, save_every=every)
    pc_traj = integrate_pc(ops, K, pc_initial_state(x0, ops.basis), args.horizon, dt, save_every=every)
    pcm = pc_moments(pc_traj, ops.basis)

    cert = max_decay_rate(ops_cl, None, args.alpha_tol, settings)
    bound = decay_bound(emp.times, emp.values[0], cert.alpha, cert.kappa) if cert else None
    bvals = bound if bound is not None else [None] * len(emp.times)
    rows = [[_fmt(t), _fmt(e), _fmt(p), _fmt(b)] for t, e, p, b in zip(emp.times, emp.values, pcm.values, bvals)]
    _write_csv(args.out / "moments.csv", ["t", "empirical", "pc", "bound"], rows)

    doc = _envelope(args, settings, path)
    doc.update({"dt": args.horizon / steps, "samples": args.samples, "order": args.order, "closed_loop": K is not None})
    if cert is None:
        doc["certificate"] = None
        print("no EMS certificate at this order; moments written for inspection")
        _write_json(args.out / "simulation.json", doc)
        return EXIT_OK
    report = verify_decay(emp, cert, args.slack)
    doc["certificate"] = {"alpha": cert.alpha, "kappa": cert.kappa, "scope": f"order-{args.order} truncation"}
    doc["verification"] = {"passed": report.passed, "margin": report.margin, "first_violation": report.first_violation, "slack": args.slack}
    _write_json(args.out / "simulation.json", doc)
    if report.passed:
        print(f"PASS: decay bound holds (alpha = {cert.alpha:.6g}, kappa = {cert.kappa:.6g}, margin {report.margin:.3g})")
        return EXIT_OK
    print(f"FAIL: decay bound violated first at t = {report.first_violation:.6g}")
    return EXIT_INFEASIBLE


COMMANDS = {
    "analyze": cmd_analyze,
    "synthesize": cmd_synthesize,
    "convergence": cmd_convergence,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SolverFailure, RecertificationError) as exc:
        print(f"error: solver: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # never end with a traceback
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
