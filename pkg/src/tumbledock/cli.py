"""
Command line interface.

::

    tumbledock plan <scenario> [--out-dir D] [--N k] [--tmax s] [--init decision.csv]
    tumbledock propagate <scenario> [--controls decision.csv] [--out-dir D]
    tumbledock verify <trajectory.csv> <scenario>

``<scenario>`` is a TOML file or the name of a bundled scenario.  Exit codes:
0 success, 1 solver or verification failure, 2 invalid input or I/O error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import scenario as sc
from .errors import ParseError, ValidationError

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("tumbledock.cli")


def _parser():
    p = argparse.ArgumentParser(prog="tumbledock", description="Energy-optimal docking to a tumbling target")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    pl = sub.add_parser("plan", help="solve the docking problem and verify the result")
    pl.add_argument("scenario")
    pl.add_argument("--out-dir", type=Path, help="write trajectory.csv, decision.csv and report.json here")
    pl.add_argument("--N", type=int, help="override the number of control intervals")
    pl.add_argument("--tmax", type=float, help="override the maneuver time limit (s)")
    pl.add_argument("--init", type=Path, help="decision.csv to start from (resampled to N)")

    pr = sub.add_parser("propagate", help="propagate given controls (zero by default) and verify")
    pr.add_argument("scenario")
    pr.add_argument("--controls", type=Path, help="decision.csv with the ZOH controls and final time")
    pr.add_argument("--out-dir", type=Path, help="write trajectory.csv and report.json here")

    ve = sub.add_parser("verify", help="verify an exported trajectory against a scenario")
    ve.add_argument("trajectory", type=Path)
    ve.add_argument("scenario")
    return p


def _write_outputs(out_dir, traj, decision, report):
    out_dir.mkdir(parents=True, exist_ok=True)
    sc.export_trajectory(traj, decision.controls, out_dir / "trajectory.csv")
    sc.export_decision(decision, out_dir / "decision.csv")
    sc.write_report(report, out_dir / "report.json")


def _plan(args):
    scen = sc.load_scenario(args.scenario).with_overrides(N=args.N, t_max=args.tmax)
    init = sc.read_decision(args.init) if args.init else None
    decision, traj, solve_report, report = sc.plan(scen, init)
    if args.out_dir:
        _write_outputs(args.out_dir, traj, decision, report)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if solve_report.converged and report.passed else EXIT_FAILURE


def _propagate(args):
    scen = sc.load_scenario(args.scenario)
    decision = sc.read_decision(args.controls) if args.controls else None
    if decision is not None:
        scen = scen.with_overrides(N=decision.N)
    traj = sc.propagate_scenario(scen, decision)
    report = sc.verify(traj, scen)
    if args.out_dir:
        if decision is None:
            decision = sc.tr.initial_guess(scen.to_ocp())
        _write_outputs(args.out_dir, traj, decision, report)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def _verify(args):
    scen = sc.load_scenario(args.scenario)
    traj = sc.read_trajectory(args.trajectory, scen.integrator.substeps_per_interval)
    report = sc.verify(traj, scen)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_FAILURE


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(name)s %(levelname)s %(message)s")
    handler = {"plan": _plan, "propagate": _propagate, "verify": _verify}[args.command]
    try:
        return handler(args)
    except (ParseError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
