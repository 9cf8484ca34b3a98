"""Command-line entry point: ``missnet run | validate | theory``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (AllDivergedError, RunConfig, emit_results, monte_carlo, prepare_output,
                      validate_report)
from .scenario import ScenarioError, describe, load_scenario
from .theory import CapacityError, UnstableSpecError, predict


def _parser():
    ap = argparse.ArgumentParser(prog="missnet", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo simulation of a scenario")
    run.add_argument("--scenario", required=True, help="built-in name or config file path")
    run.add_argument("--p", type=float, help="override the missing probability (also sets p_hat)")
    run.add_argument("--mu", type=float, help="override every agent's step size")
    run.add_argument("--experiments", type=int, help="number of independent runs")
    run.add_argument("--horizon", type=int, help="iterations per run")
    run.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    run.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--emit-theory", action="store_true")
    run.add_argument("--emit-baselines", action="store_true")
    run.add_argument("--emit-plot-data", action="store_true")
    run.add_argument("--out", required=True, help="output directory")

    val = sub.add_parser("validate", help="check a scenario's invariants and stability")
    val.add_argument("--scenario", required=True)

    th = sub.add_parser("theory", help="print predicted steady-state MSDs")
    th.add_argument("--scenario", required=True)
    th.add_argument("--p", type=float)
    return ap


def _cmd_run(args):
    spec = load_scenario(args.scenario, p=args.p, mu=args.mu)
    cfg = RunConfig(spec=spec,
                    n_experiments=args.experiments or spec.n_experiments,
                    horizon=args.horizon, master_seed=args.seed, out_dir=args.out,
                    emit_theory=args.emit_theory, emit_baselines=args.emit_baselines,
                    emit_plot_data=args.emit_plot_data, workers=args.workers)
    prepare_output(args.out)
    res = monte_carlo(cfg)
    paths = emit_results(res, cfg)
    sys.stdout.write(paths["summary.txt"].read_text())
    return 0


def _cmd_validate(args):
    spec = load_scenario(args.scenario)
    for line in describe(spec):
        print(line)
    checks = validate_report(spec)
    for ok, msg in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {msg}")
    return 0 if all(ok for ok, _ in checks) else 1


def _cmd_theory(args):
    spec = load_scenario(args.scenario, p=args.p)
    try:
        pred = predict(spec)
    except (UnstableSpecError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"network MSD {pred.msd_network_db:.3f} dB")
    for k, v in enumerate(pred.msd_per_node_db):
        print(f"node {k + 1} MSD {v:.3f} dB")
    print(f"mean recursion spectral radius {pred.mean_radius:.6f}")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    np.seterr(all="ignore")
    try:
        return {"run": _cmd_run, "validate": _cmd_validate, "theory": _cmd_theory}[args.command](args)
    except (ScenarioError, OSError, ValueError, AllDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
