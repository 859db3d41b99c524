"""Command-line entry point: run, validate, bounds, rigidity, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .engine import run
from .errors import FormationError, ParseError, ValidationError
from .formation import (
    follower_laplacian_block,
    is_infinitesimally_bearing_rigid,
    kernel_dimension,
    rigidity_matrix,
)
from .laws import gamma_eig_bound, gamma_norm_bound
from .metrics import compute_metrics, theoretical_bounds
from .scenario import load_scenario
from .traceio import export_plots, export_trace, write_report

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
MODES = {"raw": "raw_sign", "layer": "boundary_layer"}

log = logging.getLogger("bearingsim")


def _fail(exc: FormationError) -> int:
    print(json.dumps(exc.to_dict()), file=sys.stderr)
    return EXIT_INVALID


def _load(path):
    return load_scenario(path)


def _override(sc, step: float | None, mode: str | None):
    changes = {}
    if step is not None:
        old = sc.settings
        ratio = old.stride * old.step / step
        changes["step"] = step
        changes["stride"] = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 and ratio >= 1 else 1
    if mode is not None:
        changes["mode"] = MODES[mode]
    if not changes:
        return sc
    sc = sc.with_settings(**changes)
    problems = sc.settings.problems()
    if problems:
        raise ValidationError(problems)
    return sc


def run_one(path, out: Path | None = None, step: float | None = None, mode: str | None = None) -> dict:
    """Run a scenario end to end and write report, trace and plots. Returns a summary dict."""
    sc = _override(_load(path), step, mode)
    out = Path(out) if out is not None else (sc.output_dir or Path("out") / sc.name)
    trace = run(sc)
    report = compute_metrics(trace, sc)
    files = export_trace(trace, out / "trace.csv")
    files += export_plots(trace, out, sc.obstacle)
    report.files = {p.name: str(p) for p in files}
    report.files["report.json"] = str(out / "report.json")
    write_report(report, out / "report.json")
    return {
        "scenario": sc.name,
        "out": str(out),
        "converged": sum(f.converged_at is not None for f in report.followers),
        "followers": len(report.followers),
        "bounds_ok": report.bounds_ok,
        "max_bearing_error_after": report.max_bearing_error_after,
        "abort": report.abort,
    }


def cmd_run(args) -> int:
    summary = run_one(args.scenario, args.out, args.step, args.mode)
    print(json.dumps(summary, indent=1))
    if summary["abort"] is not None:
        print(json.dumps({"error": "RunAborted", "message": summary["abort"]["detail"]}), file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    g = sc.graph
    print(json.dumps({"scenario": sc.name, "valid": True, "agents": g.n, "leaders": g.l, "law": sc.law}))
    return EXIT_OK


def cmd_bounds(args) -> int:
    sc = _load(args.scenario)
    bounds = theoretical_bounds(sc.spec, sc.initial_positions, sc.alpha)
    print(json.dumps({"scenario": sc.name, "alpha": sc.alpha, "bounds": {str(i): T for i, T in bounds.items()}}, indent=1))
    return EXIT_OK


def cmd_rigidity(args) -> int:
    sc = _load(args.scenario)
    spec, g = sc.spec, sc.graph
    p = spec.target_config if spec.target_config is not None else spec.targets_from_leaders(sc.initial_positions[: g.l])
    R = rigidity_matrix(g, p)
    L_ff = follower_laplacian_block(g, p)
    out = {
        "scenario": sc.name,
        "kernel_dimension": kernel_dimension(R),
        "infinitesimally_rigid": is_infinitesimally_bearing_rigid(g, p),
        "follower_laplacian_lambda_min": float(np.linalg.eigvalsh(L_ff)[0]),
        "followers": [
            {
                "agent": i,
                "lambda1": float(spec.follower_lambda1[k]),
                "gamma_min_eig": gamma_eig_bound(spec.desired(i), sc.beta),
                "gamma_min_norm": gamma_norm_bound(spec.desired(i), sc.beta),
            }
            for k, i in enumerate(g.followers)
        ],
    }
    print(json.dumps(out, indent=1))
    return EXIT_OK


def _sweep_job(job):
    path, out, step, mode = job
    try:
        return run_one(path, out, step, mode)
    except FormationError as exc:
        return {"scenario": str(path), "error": exc.to_dict()}


def cmd_sweep(args) -> int:
    root = Path(args.out)
    jobs = [(p, root / Path(p).stem, args.step, args.mode) for p in args.scenarios]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_sweep_job, jobs))
    print(json.dumps(results, indent=1))
    if any("error" in r for r in results):
        return EXIT_INVALID
    if any(r.get("abort") for r in results):
        return EXIT_ABORT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bearingsim", description="Bearing-based leader-follower formation simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write report, trace and plots")
    p.add_argument("scenario")
    p.add_argument("--out", type=Path)
    p.add_argument("--step", type=float)
    p.add_argument("--mode", choices=sorted(MODES))
    p.set_defaults(func=cmd_run)

    for name, fn, text in (
        ("validate", cmd_validate, "load and validate a scenario"),
        ("bounds", cmd_bounds, "print a priori finite-time bounds"),
        ("rigidity", cmd_rigidity, "print bearing rigidity diagnostics"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("scenario")
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep", help="run several scenarios concurrently")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--out", default="out")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--step", type=float)
    p.add_argument("--mode", choices=sorted(MODES))
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        return _fail(exc)
    except FormationError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
