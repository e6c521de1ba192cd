"""Command-line front end: ``measure-heat <command> --config <path>``.

Exit codes: 0 success, 1 property/bracketing failure, 2 invalid config,
3 solver failure, 4 duality residual above tolerance, 5 horizon reached
before the steady-state tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from measure_heat.asymptotics import DEFAULT_TOL, bracket_run, run_to_steady
from measure_heat.config import Experiment, build_experiment, load_config
from measure_heat.duality import duality_residual
from measure_heat.errors import ConfigError, SolverError
from measure_heat.mesh import l1_norm, linf_norm
from measure_heat.output import write_json, write_node_table
from measure_heat.solvers import TimeGrid, solve_elliptic, solve_parabolic, solve_retrograde
from measure_heat.verify import DUALITY_TOL, format_table, run_suite

logger = logging.getLogger("measure_heat")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DUALITY = 4
EXIT_HORIZON = 5


def _out_dir(exp: Experiment, override: str | None) -> Path:
    out = Path(override or exp.config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _time_grid(exp: Experiment) -> TimeGrid:
    t = exp.config.time
    if t is None or t.t_end is None:
        raise ConfigError("this command needs time.dt and time.t_end")
    return TimeGrid.covering(t.dt, t.t_end)


def cmd_elliptic(exp: Experiment, out: Path, args) -> int:
    v, info = solve_elliptic(exp.mesh, exp.coefficient, exp.measure, return_info=True)
    write_node_table(out / "v.csv", exp.mesh, v.values)
    write_json(out / "summary.json", {
        "l1": l1_norm(v),
        "linf": linf_norm(v),
        "solver_method": info["method"],
        "solver_iterations": info["iterations"],
        "solver_residual": info["residual"],
    })
    return EXIT_OK


def _trajectory_summary(traj, tg: TimeGrid) -> dict:
    return {
        "dt": tg.dt,
        "n_steps": tg.n_steps,
        "t_end": tg.t_end,
        "final_l1": float(traj.l1[-1]),
        "final_linf": float(traj.linf[-1]),
        "final_l1_dist_ref": float(traj.l1_dist_ref[-1]),
    }


def cmd_parabolic(exp: Experiment, out: Path, args) -> int:
    tg = _time_grid(exp)
    v = solve_elliptic(exp.mesh, exp.coefficient, exp.measure)
    u0 = exp.initial_data(v)
    traj = solve_parabolic(exp.mesh, exp.coefficient, exp.measure, u0, tg, reference=v,
                           stride=exp.config.output.checkpoint_stride)
    traj.write_csv(out / "trajectory.csv")
    traj.write_diagnostics_csv(out / "diagnostics.csv")
    write_json(out / "summary.json", _trajectory_summary(traj, tg))
    return EXIT_OK


def cmd_retrograde(exp: Experiment, out: Path, args) -> int:
    tg = _time_grid(exp)
    g = exp.source_schedule(tg.n_steps)
    traj = solve_retrograde(exp.mesh, exp.coefficient, g, tg, stride=exp.config.output.checkpoint_stride)
    traj.write_csv(out / "trajectory.csv")
    traj.write_diagnostics_csv(out / "diagnostics.csv")
    write_json(out / "summary.json", _trajectory_summary(traj, tg))
    return EXIT_OK


def cmd_duality_check(exp: Experiment, out: Path, args) -> int:
    tg = _time_grid(exp)
    u0 = exp.initial_data()
    g = exp.source_schedule(tg.n_steps)
    u = solve_parabolic(exp.mesh, exp.coefficient, exp.measure, u0, tg, stride=1)
    w = solve_retrograde(exp.mesh, exp.coefficient, g, tg, stride=1)
    report = duality_residual(u, w, u0, g, exp.measure, exp.mesh, break_adjoint=args.break_adjoint)
    (out / "duality.json").write_text(report.to_json() + "\n")
    print(report.to_json())
    if not report.relative_residual <= DUALITY_TOL:
        print(f"duality residual {report.relative_residual:.3e} exceeds {DUALITY_TOL:g}", file=sys.stderr)
        return EXIT_DUALITY
    return EXIT_OK


def cmd_asymptotic(exp: Experiment, out: Path, args) -> int:
    t = exp.config.time
    if t is None:
        raise ConfigError("asymptotic needs a time section with dt")
    tol = t.tol if t.tol is not None else DEFAULT_TOL
    u0 = exp.initial_data()
    curve = run_to_steady(exp.mesh, exp.coefficient, exp.measure, u0, t.dt, tol, t.t_max)
    curve.write_csv(out / "decay.csv")
    write_json(out / "summary.json", curve.summary())
    _, verdict = bracket_run(exp.mesh, exp.coefficient, exp.measure, u0, t.dt, t.t_max, tol)
    write_json(out / "bracket.json", {
        "bracket_held": verdict.bracket_held,
        "first_violation": list(verdict.first_violation) if verdict.first_violation else None,
        "upper_stop_reason": verdict.upper.stop_reason,
        "lower_stop_reason": verdict.lower.stop_reason,
        "bracketing_asserted": exp.coefficient.is_diagonal,
    })
    if not curve.reached:
        print(f"horizon t_max reached at t={curve.t_final:.6g} before tolerance", file=sys.stderr)
        return EXIT_HORIZON
    if exp.coefficient.is_diagonal and not verdict.bracket_held:
        print(f"bracketing violated at {verdict.first_violation}", file=sys.stderr)
        return EXIT_FAILED
    if not verdict.bracket_held:
        logger.warning("bracketing violated at %s (non-diagonal M: reported only)", verdict.first_violation)
    return EXIT_OK


COMMANDS = {
    "elliptic": cmd_elliptic,
    "parabolic": cmd_parabolic,
    "retrograde": cmd_retrograde,
    "duality-check": cmd_duality_check,
    "asymptotic": cmd_asymptotic,
}


def cmd_verify(args) -> int:
    results = run_suite(seed=args.seed if args.seed is not None else 0, tier=args.tier,
                        break_adjoint=args.break_adjoint)
    table = format_table(results)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text(table + "\n")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failing property: {failed[0].name}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="measure-heat", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=[*COMMANDS, "verify"])
    parser.add_argument("--config", help="experiment JSON file (required except for verify)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="seed for randomised presets (overrides config seed)")
    parser.add_argument("--tier", choices=["quick", "full"], default="quick", help="verify suite size")
    parser.add_argument("--break-adjoint", action="store_true",
                        help="debug: mis-pair the duality quadrature (negative control)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        return cmd_verify(args)
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        exp = build_experiment(load_config(args.config), seed=args.seed)
        out = _out_dir(exp, args.out)
        return COMMANDS[args.command](exp, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
