"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime contract violation.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

from .errors import ConfigError, DadsError
from .harness.config import SCENARIOS, dump_default_config, load_config, parse_config
from .harness.experiments import (Bundle, build_scenario, partition_tables, run_experiment,
                                  sweep_occupancy)
from .harness.output import list_bundle, read_csv, render_plots, write_bundle
from .partition import exact_reduction, reduction_formula

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT = 0, 2, 3


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _config(path: str | None, seed: int | None = None):
    cfg = load_config(path) if path else parse_config({})
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed, raw={**cfg.raw, "seed": seed})
    return cfg


def cmd_simulate(args) -> int:
    cfg = _config(args.config, args.seed)
    out = Path(args.out or cfg.out_dir)
    bundle = run_experiment(cfg)
    write_bundle(bundle, out, yaml.safe_dump(cfg.raw, sort_keys=False), plots=cfg.plots)
    print(f"wrote {len(list_bundle(out))} files to {out}")
    return EXIT_OK


def cmd_partition(args) -> int:
    cfg = _config(args.config)
    scenario = build_scenario(cfg)
    bundle = Bundle()
    receiver = min(scenario.receivers)
    parts = partition_tables(cfg, scenario, bundle, receiver)
    for name, part in parts.items():
        sizes = ",".join(str(len(s)) for s in part.subsets)
        print(f"{name}: m={part.m} sizes=[{sizes}] distance_evals={part.distance_evals}")
    total = len(scenario.graph.sensor(receiver).neighbors_in)
    print(f"reduction formula (m'=4): {reduction_formula(total, 4)}  exact: {exact_reduction(total, 4)}")
    if args.out:
        write_bundle(bundle, Path(args.out), plots=False)
    return EXIT_OK


def cmd_sweep(args) -> int:
    bundle = sweep_occupancy(seed=args.seed, draws=args.draws)
    write_bundle(bundle, Path(args.out), plots=not args.no_plots)
    print(f"wrote occupancy grid to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    d = Path(args.input)
    if not d.is_dir():
        raise ConfigError(f"no such bundle directory: {d}")
    for p in render_plots(d):
        print(f"plot {p}")
    if (d / "optrate.csv").exists():
        _, rows = read_csv(d / "optrate.csv")
        for r in rows:
            print(f"{r['algorithm']:5s} {r['stage1']:12s} {r['family']:11s} "
                  f"{r['scope']:15s} {float(r['rate']):.4f}")
    if (d / "summary.json").exists():
        print(json.dumps(json.loads((d / "summary.json").read_text()), sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dads", description=__doc__.splitlines()[0])
    p.add_argument("--print-default-config", nargs="?", const="star100", choices=SCENARIOS,
                   metavar="SCENARIO", help="dump every config key with its default and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("simulate", help="run a scenario and write its CSV/SVG bundle")
    s.add_argument("--config")
    s.add_argument("--seed", type=_u64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("partition", help="print partition statistics for a scenario")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_partition)

    s = sub.add_parser("sweep-occupancy", help="analytic and Monte Carlo occupancy grid")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=_u64, default=1)
    s.add_argument("--draws", type=int, default=10_000)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", help="regenerate plots and tables from a bundle")
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_default_config:
        sys.stdout.write(dump_default_config(args.print_default_config))
        return EXIT_OK
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DadsError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
