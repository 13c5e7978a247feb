"""Command line entry point: ``python -m ssetraj <subcommand> --config cfg.json``.

Exit codes: 0 success or all checks pass, 1 a check failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, parse_config
from .experiments import ExperimentResult, run
from .integrate import BoundaryMassError, StepFailure, default_threads

MANIFEST_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path: Path, columns: dict) -> None:
    names = list(columns)
    n = len(next(iter(columns.values()))) if names else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(columns[k][i]) for k in names])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [float(v.real), float(v.imag)]
    return v


def write_artifacts(out: Path, cfg: ExperimentConfig, res: ExperimentResult, threads: int, wall: float) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.experiment
    write_csv(out / f"{stem}.csv", res.columns)
    artifacts = [f"{stem}.csv"]
    if res.report is not None:
        (out / f"{stem}_report.txt").write_text(res.report + "\n")
        artifacts.append(f"{stem}_report.txt")
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "experiment": cfg.experiment,
        "version": __version__,
        "seed": cfg.seed,
        "threads": threads,
        "wall_time_s": wall,
        "config": cfg.to_dict(),
        "summary": _jsonable(res.summary),
        "passed": _jsonable(res.passed),
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ssetraj", description="Stochastic Schroedinger equation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config or a previous run manifest")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = parse_config(args.config, args.command)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed", "must fit in 64 unsigned bits")
            cfg = replace(cfg, seed=args.seed)
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ConfigError("--threads", "must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        res = run(cfg, threads)
    except BoundaryMassError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    except (StepFailure, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    if res.passed is not None:
        res.passed = bool(res.passed)
    manifest = write_artifacts(Path(args.out), cfg, res, threads, wall)
    status = "" if res.passed is None else (" PASS" if res.passed else " FAIL")
    print(f"{cfg.experiment}: wrote {', '.join(manifest['artifacts'])} to {args.out}{status}")
    if res.report:
        print(res.report)
    elif res.summary:
        print(json.dumps(manifest["summary"], sort_keys=True))
    return 1 if res.passed is False else 0


if __name__ == "__main__":
    sys.exit(main())
