"""Batch front end: ``photoion <command> [--config FILE] [--out DIR] ...``.

Each command writes ``<name>.jsonl`` records and ``<table>.tsv`` files into the
output directory. Every record and table carries the config hash. The exit
status is 0 when all checks pass, 1 when a check or a module fails and 2 for
an invalid config.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

COMMANDS = ("ground-state", "rho", "q2", "oracle", "decoupling", "bounds", "decay", "duhamel", "all")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photoion", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration (default: the bundled reference config)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded BLAS, no timings in the output")
    parser.add_argument("--t-max", type=float, help="largest time in units of 1/|e0| (overrides times.t_max)")
    parser.add_argument("--seed", type=int, help="seed for randomized sweeps")
    return parser


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: Path, rows: list[dict], config_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        if not rows:
            return
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        columns = list(rows[0])
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])


def write_records(path: Path, command: str, records: list[dict], config_hash: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"command": command, "config_hash": config_hash, **rec}, sort_keys=True) + "\n")


def emit(report, out_dir: Path, config_hash: str, deterministic: bool) -> None:
    records = list(report.records)
    if not deterministic:
        records = [{**r, "elapsed_s": report.elapsed} for r in records]
    write_records(out_dir / f"{report.command}.jsonl", report.command, records, config_hash)
    for name, rows in report.tables.items():
        write_table(out_dir / f"{name}.tsv", rows, config_hash)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        # must happen before numpy loads its BLAS
        for var in THREAD_VARS:
            os.environ[var] = "1"

    from . import config as config_mod
    from . import pipelines

    try:
        cfg = config_mod.load(args.config) if args.config else config_mod.load_default()
        cfg = cfg.with_overrides(
            t_max=args.t_max,
            seed=args.seed,
            output_dir=args.out,
            deterministic=True if args.deterministic else None,
        )
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = cfg.digest()

    try:
        ctx = pipelines.Context(cfg)
    except Exception as exc:  # noqa: BLE001 - report model failures with context
        print(f"{args.command}: failed to build the electron model: {exc}", file=sys.stderr)
        return 1

    status = 0
    summary = []
    for run in pipelines.PIPELINES[args.command]:
        name = run.__name__.removeprefix("run_").replace("_", "-")
        try:
            report = run(ctx)
        except config_mod.ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:  # noqa: BLE001 - propagate as a failed check with context
            print(f"{name}: FAIL ({type(exc).__name__}: {exc})", file=sys.stderr)
            summary.append({"command": name, "passed": False, "error": f"{type(exc).__name__}: {exc}"})
            status = 1
            continue
        emit(report, out_dir, config_hash, cfg.deterministic)
        verdict = "PASS" if report.passed else "FAIL"
        timing = "" if cfg.deterministic else f" [{report.elapsed:.1f} s]"
        print(f"{report.command}: {verdict}{timing}")
        for line in report.summary:
            print(f"  {line}")
        summary.append({"command": report.command, "passed": report.passed})
        if not report.passed:
            status = 1
    if args.command == "all":
        write_records(out_dir / "all.jsonl", "all", summary, config_hash)
    return status


if __name__ == "__main__":
    sys.exit(main())
