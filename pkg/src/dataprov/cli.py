"""Command-line entry point: ``dataprov run|analyze|report``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .errors import ConfigError, InvariantViolation

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _print_costs(report, fmt):
    from .report import COST_COLUMNS, render, report_costs

    rows = report_costs(report)
    for r in rows:
        r["usd"] = format(r["usd"].normalize(), "f")
    sys.stdout.write(render(COST_COLUMNS, rows, fmt))


def cmd_run(args) -> int:
    from .report import write_run
    from .scenario import fixture_path, load_config, run_scenario

    path = Path(args.scenario)
    if not path.exists() and fixture_path(args.scenario).exists():
        path = fixture_path(args.scenario)
    config = load_config(path)
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    out = Path(args.out) if args.out else Path("runs") / f"{config.name}-{config.rng_seed}"
    report = run_scenario(config, store_root=out / "store")
    write_run(report, out, figures=not args.no_figures)
    _print_costs(report, args.format)
    print(f"# {len(report.sessions)} sessions, {len(report.attempts)} rejected attempts; report in {out}",
          file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .report import write_analysis
    from .scenario import fixture_path, load_grid, run_analysis

    path = Path(args.grid)
    if not path.exists() and fixture_path(args.grid).exists():
        path = fixture_path(args.grid)
    grid = load_grid(path)
    if args.seed is not None:
        grid.rng_seed = args.seed
    rows = run_analysis(grid)
    sys.stdout.write(write_analysis(rows, Path(args.out) if args.out else None, args.format))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import load_run, plot_gas

    run_dir = Path(args.run_dir)
    if not (run_dir / "summary.json").exists():
        raise ConfigError(f"{run_dir} is not a run directory (no summary.json)")
    report = load_run(run_dir)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        plot_gas(report, Path(args.out))
    _print_costs(report, args.format)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dataprov", description="Provenance protocol simulator and analysis toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the file's rng_seed (u64)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--format", choices=("csv", "table"), default="csv")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a scenario and write its report")
    run.add_argument("scenario", help="scenario file, or the name of a bundled fixture")
    run.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", parents=[common], help="failure-probability study over a grid")
    an.add_argument("grid", help="grid file, or the name of a bundled fixture")
    an.set_defaults(func=cmd_analyze)

    rep = sub.add_parser("report", parents=[common], help="re-render costs (and figures with --out) for a run")
    rep.add_argument("run_dir")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be a u64", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
