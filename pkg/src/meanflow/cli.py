"""Command-line entry point.

Subcommands:
    meanflow run <config.toml>               drive one experiment
    meanflow analyze <snapshot> --rho RHO    bubble report for a field snapshot
    meanflow stationary <config.toml>        Newton solve of the elliptic problem
    meanflow probe-continuity <config.toml>  perturbation-response ratios
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .concentration import extract_bubbles, report_to_json
from .errors import MeanFlowError
from .grid import l2_norm
from .harness import continuity_probe, load_config, load_newton_config, run_experiment
from .snapshots import read_snapshot, write_snapshot
from .stationary import newton_solve, residual


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = run_experiment(cfg)
    print(f"{report.experiment}: {report.outcome} "
          f"(residual_or_J = {report.residual_or_J:.6g})")
    if report.verdict_path:
        print(f"verdict: {report.verdict_path}")
    return report.exit_code


def _cmd_analyze(args) -> int:
    v, _t, rho_file = read_snapshot(args.snapshot)
    rho = args.rho if args.rho is not None else rho_file
    from .functionals import ProblemData

    p = ProblemData(rho, v.grid.constant_field(rho / v.grid.area))
    h = None
    if args.h is not None:
        h, _, _ = read_snapshot(args.h)
    report = extract_bubbles(v, p, h=h)
    text = report_to_json(report)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_stationary(args) -> int:
    cfg = load_config(args.config)
    ncfg = load_newton_config(args.config)
    from .grid import TorusGrid

    grid = TorusGrid(cfg.grid_n)
    p = cfg.q_spec.build(grid, cfg.rho)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    v0 = cfg.init_spec.build(p, rng)
    history: list[float] = []
    v = newton_solve(p, v0, ncfg, callback=history.append)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(out / "stationary.mfld", v, 0.0, cfg.rho)
    final_res = l2_norm(residual(p, v))
    verdict = {
        "outcome": "Solved",
        "residual": final_res,
        "iterations": len(history) - 1,
        "residual_history": history,
    }
    (out / "stationary.json").write_text(json.dumps(verdict, indent=2) + "\n")
    print(f"stationary solve: residual {final_res:.3e} "
          f"after {len(history) - 1} Newton iterations")
    return 0


def _cmd_probe(args) -> int:
    cfg = load_config(args.config)
    probe = continuity_probe(cfg)
    for delta, ratio in probe.ratios.items():
        print(f"delta = {delta:.0e}: response ratio {ratio:.6g}")
    print(f"stability quotient {probe.quotient:.4f}  (kappa = {probe.kappa:.4f})")
    return 0 if probe.stable else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meanflow", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a TOML config")
    run_p.add_argument("config")
    run_p.set_defaults(fn=_cmd_run)

    an_p = sub.add_parser("analyze", help="bubble report for a snapshot")
    an_p.add_argument("snapshot")
    an_p.add_argument("--rho", type=float, default=None,
                      help="override the rho stored in the snapshot header")
    an_p.add_argument("--h", default=None, help="snapshot of the perturbation h")
    an_p.add_argument("--out", default=None, help="write the JSON report here")
    an_p.set_defaults(fn=_cmd_analyze)

    st_p = sub.add_parser("stationary", help="solve the elliptic problem directly")
    st_p.add_argument("config")
    st_p.set_defaults(fn=_cmd_stationary)

    pr_p = sub.add_parser("probe-continuity", help="initial-data sensitivity probe")
    pr_p.add_argument("config")
    pr_p.set_defaults(fn=_cmd_probe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MeanFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
