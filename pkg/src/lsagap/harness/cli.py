"""Command line entry point: run | aggregate | plot.

Exit codes: 0 success, 2 invalid configuration, 3 numerical guard
exceeded, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .. import __version__
from ..attention import DivergenceError
from ..moments import GuardExceededError
from .config import ConfigError, config_hash, parse_config, resolved_items
from .csvio import aggregate_rows, read_csv, write_results, write_summary, write_traces
from .experiments import run_experiment
from .plotting import PLOT_KINDS, plot_results

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_DIVERGED = 4

DEFAULT_PLOT_KIND = {
    "train-eval-tf": "cmse",
    "train-eval-cot": "cmse",
    "context-scan": "scaling",
    "layer-scan": "scaling",
    "softmax-compare": "scaling",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsagap",
        description="Seeded experiments on linear self-attention vs. linear "
                    "prediction for AR(p) series.")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute an experiment config")
    runp.add_argument("--config", required=True, help="path to the INI config")
    runp.add_argument("--out", default=None, help="output directory override")
    runp.add_argument("--jobs", type=int, default=1, help="parallel cells")
    runp.add_argument("--fast", action="store_true",
                      help="reduced sample counts and epochs")
    runp.add_argument("--seed-override", default=None,
                      help="comma-separated seed list replacing [seeds]")

    aggp = sub.add_parser("aggregate", help="mean and SEM per config point")
    aggp.add_argument("results", help="path to results.csv")
    aggp.add_argument("--out", default=None, help="output directory")

    plotp = sub.add_parser("plot", help="render SVG charts from a CSV")
    plotp.add_argument("results", help="results.csv or traces.csv")
    plotp.add_argument("--kind", choices=PLOT_KINDS, required=True)
    plotp.add_argument("--out", default=None, help="output directory")
    return parser


def _cmd_run(args) -> int:
    try:
        seeds = None
        if args.seed_override:
            seeds = tuple(int(s) for s in args.seed_override.replace(",", " ").split())
        cfg = parse_config(args.config, fast=args.fast, jobs=args.jobs,
                          seed_override=seeds, out_override=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    digest = config_hash(cfg)
    try:
        rows, traces = run_experiment(cfg)
    except GuardExceededError as exc:
        print(f"numerical guard exceeded: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    os.makedirs(cfg.out_dir, exist_ok=True)
    results_path = os.path.join(cfg.out_dir, "results.csv")
    write_results(results_path, rows, digest)
    if traces:
        write_traces(os.path.join(cfg.out_dir, "traces.csv"), traces)
    manifest = {
        "config_hash": digest,
        "package_version": __version__,
        "resolved": dict(resolved_items(cfg)),
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg.plots:
        kind = DEFAULT_PLOT_KIND.get(cfg.kind)
        if kind:
            source = "traces.csv" if kind in ("cmse", "values") and traces \
                else "results.csv"
            plot_results(os.path.join(cfg.out_dir, source), kind, cfg.out_dir)
    print(f"wrote {results_path} ({len(rows)} rows, config {digest})")
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    rows = read_csv(args.results)
    summary = aggregate_rows(rows)
    out_dir = args.out or os.path.dirname(args.results) or "."
    path = os.path.join(out_dir, "summary.csv")
    write_summary(path, summary)
    print(f"wrote {path} ({len(summary)} rows)")
    return EXIT_OK


def _cmd_plot(args) -> int:
    out_dir = args.out or os.path.dirname(args.results) or "."
    written = plot_results(args.results, args.kind, out_dir)
    if not written:
        print("warning: nothing to plot", file=sys.stderr)
        return EXIT_OK
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "aggregate":
        return _cmd_aggregate(args)
    return _cmd_plot(args)


if __name__ == "__main__":
    sys.exit(main())
