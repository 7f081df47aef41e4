"""bwlab command line: run experiments, verify the suite, plot CSVs."""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from .config import parse_config
from .errors import BwlabError
from .experiments import run_experiment
from .io import Series, emit_svg_lineplot, read_csv


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.out:
        from dataclasses import replace

        cfg = replace(cfg, output_dir=args.out)
    record = run_experiment(cfg)
    for name, ok in sorted(record.checks.items()):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    print(f"wrote {len(record.files)} files + manifest to {cfg.output_dir} "
          f"({record.wall_clock_s:.1f}s)")
    return 0 if record.passed else 1


def _cmd_verify(args) -> int:
    candidates = [Path.cwd() / "tests", Path(__file__).resolve().parents[2] / "tests"]
    tests = next((c for c in candidates if c.is_dir()), None)
    if tests is None:
        print("error: cannot locate the tests/ directory", file=sys.stderr)
        return 2
    cmd = [sys.executable, "-m", "pytest", str(tests), "-q"]
    if args.acceptance_only:
        cmd = [sys.executable, "-m", "pytest", str(tests / "test_acceptance.py"), "-q", "-s"]
    return subprocess.call(cmd)


def _cmd_plot(args) -> int:
    header, data = read_csv(args.csv)
    x = data[:, 0]
    series = [Series(label=header[j], x=x, y=data[:, j]) for j in range(1, data.shape[1])]
    emit_svg_lineplot(args.output, series, xlabel=header[0], logy=args.logy)
    print(f"wrote {args.output}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bwlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="override the config's output_dir")
    p_run.set_defaults(fn=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the full property/acceptance suite")
    p_verify.add_argument("--acceptance-only", action="store_true")
    p_verify.set_defaults(fn=_cmd_verify)

    p_plot = sub.add_parser("plot", help="render a CSV as an SVG line plot")
    p_plot.add_argument("csv")
    p_plot.add_argument("-o", "--output", required=True)
    p_plot.add_argument("--logy", action="store_true")
    p_plot.set_defaults(fn=_cmd_plot)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BwlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
