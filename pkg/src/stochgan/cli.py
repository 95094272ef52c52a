"""Command line entry point: ``stochgan {train,eval,sweep,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import autodiff as ad
from .experiment import (RunRecord, build_data, emit_table, entry_dirname, evaluate_checkpoint,
                         load_config, load_run_record, report_row, run_entry, run_experiment,
                         TABLE_COLUMNS)


def _load(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.precision:
        cfg.precision = args.precision
    if args.seed_override is not None:
        cfg.train = dataclasses.replace(cfg.train, seed_train=args.seed_override)
    return cfg.validate()


def cmd_train(args) -> int:
    cfg = _load(args)
    m, noise = cfg.sweep[0]
    if args.m is not None:
        m = args.m
    if args.noise is not None:
        noise = args.noise
    cfg.sweep = [(m, noise)]
    cfg.validate()
    out = Path(cfg.output_dir)
    with ad.precision(cfg.precision):
        X, Z = build_data(cfg)
        entry = run_entry(cfg, m, noise, X, Z, out / entry_dirname(m, noise))
    record = RunRecord(cfg.to_text(), cfg.content_hash(), cfg.dataset_name, [entry], status="complete")
    out.mkdir(parents=True, exist_ok=True)
    record.save(out / "run_record.json")
    print(f"trained m={m} noise={noise} for {entry.iterations} iterations -> {entry.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    reports = evaluate_checkpoint(cfg, args.checkpoint)
    m, noise = cfg.sweep[0]
    writer_rows = [TABLE_COLUMNS] + [report_row(cfg.dataset_name, m, noise, r) for r in reports]
    text = "\n".join(",".join(row) for row in writer_rows) + "\n"
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    record = run_experiment(cfg)
    print(f"{len(record.entries)} regimes finished in {record.duration_s:.1f}s -> {record.table_path}")
    return 0


def cmd_report(args) -> int:
    records = [load_run_record(p) for p in args.runs]
    path = emit_table(records, args.table)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochgan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--precision", choices=["f32", "f64"])
        p.add_argument("--seed-override", type=int, help="replace train.seed_train")

    p = sub.add_parser("train", help="train a single regime (first sweep entry unless overridden)")
    common(p)
    p.add_argument("--m", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved EMA generator")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", help="also write the rows to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate every sweep entry")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="combine run records into one CSV table")
    p.add_argument("runs", nargs="+", help="run directories or run_record.json files")
    p.add_argument("--table", required=True, help="output CSV path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
