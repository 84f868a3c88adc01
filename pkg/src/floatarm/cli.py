"""Command-line entry point: ``floatarm run | compare | sweep``.

Exit status: 0 on success, 1 for bad input (scenario, run directories,
mismatched geometry) and 2 when a simulation diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (GeometryMismatch, RunDiverged, compare, comparison_csv, format_table,
                      load_summary, run_scenario)
from .scenario import CONTROLLERS, ScenarioError, load_scenario, parse_value

log = logging.getLogger("floatarm")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2


def _print_metrics(m, out):
    d = m.diagnostics
    print(f"{m.scenario} [{m.controller}] -> {out}")
    print(f"  position error    avg {m.avg_position:.5f} m   max {m.max_position:.5f} m")
    print(f"  orientation error avg {m.avg_orientation_deg:.4f} deg max "
          f"{m.max_orientation_deg:.4f} deg")
    print(f"  bound violation {d['max_bound_violation']:.2e}, joint limit excess "
          f"{d['max_position_limit_excess_rad']:.2e} rad / "
          f"{d['max_velocity_limit_excess_rad_s']:.2e} rad/s, wall {d['wall_time_s']:.1f} s")
    if "final_phase" in d:
        print(f"  mission: {d['final_phase']} after {d['attempts']} attempt(s), "
              f"{len(d['restore_intervals'])} restore interval(s)")


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    ctrl = args.controller or scn.controller
    out = Path(args.out) if args.out else Path("runs") / f"{scn.name}-{ctrl.replace('+', '-')}"
    try:
        m = run_scenario(scn, out, controller=ctrl)
    except RunDiverged as exc:
        print(f"diverged at tick {exc.tick} (t = {exc.t:.3f} s); partial logs in {out}",
              file=sys.stderr)
        return EXIT_DIVERGED
    _print_metrics(m, out)
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = [load_summary(d) for d in args.run_dirs]
    labels = [Path(d).name for d in args.run_dirs]
    table, pairs = compare(summaries, labels, check_geometry=not args.no_geometry_check)
    print(format_table(table, pairs))
    if args.csv:
        Path(args.csv).write_text(comparison_csv(table, pairs))
    return EXIT_OK


def _sweep_values(raw) -> list:
    if len(raw) == 1 and "," in raw[0] and not raw[0].lstrip().startswith("["):
        raw = raw[0].split(",")
    return [parse_value(v.strip()) for v in raw]


def cmd_sweep(args) -> int:
    values = _sweep_values(args.values)
    root = Path(args.out) if args.out else Path("runs") / f"sweep-{args.param}"
    summaries, labels = [], []
    status = EXIT_OK
    for v in values:
        scn = load_scenario(args.scenario, {args.param: v})
        label = f"{args.param}={v}".replace("/", "_").replace(" ", "")
        out = root / label
        try:
            m = run_scenario(scn, out, controller=args.controller)
        except RunDiverged as exc:
            print(f"{label}: diverged at tick {exc.tick}", file=sys.stderr)
            status = EXIT_DIVERGED
            continue
        _print_metrics(m, out)
        summaries.append(m.summary())
        labels.append(label)
    if len(summaries) >= 2:
        table, pairs = compare(summaries, labels, check_geometry=False)
        print(format_table(table, pairs))
        root.mkdir(parents=True, exist_ok=True)
        (root / "comparison.csv").write_text(comparison_csv(table, pairs))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floatarm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario", help="scenario TOML file")
    r.add_argument("--out", help="output directory (default runs/<name>-<controller>)")
    r.add_argument("--controller", choices=CONTROLLERS, help="override the scenario's controller")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate and compare finished runs")
    c.add_argument("run_dirs", nargs="+", help="run output directories")
    c.add_argument("--csv", help="also write the table as CSV")
    c.add_argument("--no-geometry-check", action="store_true",
                   help="compare runs even if their scenario geometry differs")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="run a scenario for several values of one key")
    s.add_argument("scenario", help="scenario TOML file")
    s.add_argument("--param", required=True, help="dotted key, e.g. controller.horizon_steps")
    s.add_argument("--values", required=True, nargs="+",
                   help="values as TOML literals, space or comma separated")
    s.add_argument("--out", help="output root directory")
    s.add_argument("--controller", choices=CONTROLLERS)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, GeometryMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
