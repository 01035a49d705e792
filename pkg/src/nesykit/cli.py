"""Command line entry point.

Subcommands: train, eval, transfer, export-rules, render, verify-data.
Exit codes: 0 success, 1 config error, 2 data error, 3 threshold failure
(with --assert-accuracy).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint
from .config import ConfigError, resolve_config
from .runner import (build_eval_dataset, build_model, build_pools, evaluate,
                     run_experiment)
from .symbolic import export_table_csv, write_pgm

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_THRESHOLD = 3


def _err(message):
    print(f"error: {message}", file=sys.stderr)


def _add_config_args(sub):
    sub.add_argument("--config", default=None, help="INI config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="SECTION.KEY=VALUE",
                     help="override one config key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nesykit",
        description="train and inspect jointly learned perception nets "
                    "and rule tables")
    subs = parser.add_subparsers(dest="command", required=True)

    t = subs.add_parser("train", help="run an experiment and write reports")
    _add_config_args(t)
    t.add_argument("--out", default=None, help="run directory override")
    t.add_argument("--assert-accuracy", type=float, default=None,
                   help="exit 3 if mean accuracy falls below this")

    e = subs.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_config_args(e)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--assert-accuracy", type=float, default=None)

    tr = subs.add_parser("transfer",
                         help="seed perception nets from a checkpoint, "
                              "learn the rule table from scratch")
    _add_config_args(tr)
    tr.add_argument("--from", dest="source", required=True,
                    help="checkpoint written by a previous run")
    tr.add_argument("--task", required=True)
    tr.add_argument("--out", default=None)
    tr.add_argument("--assert-accuracy", type=float, default=None)

    x = subs.add_parser("export-rules", help="write rule tables from a checkpoint")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--align", action="store_true")
    x.add_argument("--out", default=None, help="directory (default: beside ckpt)")

    r = subs.add_parser("render", help="render a stored matrix to PGM or CSV")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--kind", choices=("confusion", "rules"), required=True)
    r.add_argument("--name", default=None,
                   help="matrix name (default: primary)")
    r.add_argument("--out", required=True)

    v = subs.add_parser("verify-data", help="recheck dataset labels with oracles")
    _add_config_args(v)
    return parser


def _resolve(args, extra=()):
    return resolve_config(args.config, list(args.overrides) + list(extra))


def _summarize(report):
    std = "n/a" if report.accuracy_std is None else f"{report.accuracy_std:.4f}"
    print(f"{report.task}: accuracy {report.accuracy_mean:.4f} (std {std}) "
          f"over {len(report.seed_results)} seed(s)")


def _check_threshold(threshold, value):
    if threshold is not None and value < threshold:
        _err(f"accuracy {value:.4f} below required {threshold:.4f}")
        return EXIT_THRESHOLD
    return EXIT_OK


def _cmd_train(args, extra=()):
    try:
        cfg = _resolve(args, extra)
        if args.out:
            cfg.train.out_dir = args.out
    except ConfigError as exc:
        _err(exc)
        return EXIT_CONFIG
    try:
        pools = build_pools(cfg)
        report = run_experiment(cfg, pools=pools)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_DATA
    _summarize(report)
    return _check_threshold(args.assert_accuracy, report.accuracy_mean)


def _cmd_eval(args):
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        _err(exc)
        return EXIT_CONFIG
    try:
        pools = build_pools(cfg)
        blob = load_checkpoint(args.ckpt)
        model = build_model(cfg, seed=cfg.train.seeds[0])
        model.load_state(blob)
        ds = build_eval_dataset(cfg, pools)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_DATA
    result = evaluate(model, ds, batch_size=cfg.train.eval_batch)
    line = f"accuracy {result.accuracy:.4f}"
    if result.fine_grained is not None:
        line += f" fine-grained {result.fine_grained:.4f}"
    print(line)
    return _check_threshold(args.assert_accuracy, result.accuracy)


def _cmd_transfer(args):
    extra = [f"task.name={args.task}", f"task.transfer_from={args.source}"]
    return _cmd_train(args, extra)


def _table_csv_rows(path, table, conf=None):
    """rules.csv layout: one row per input tuple plus output (and confidence)."""
    import csv

    table = np.asarray(table)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n = table.ndim
        head = [f"s{i + 1}" for i in range(n)] + ["output"]
        writer.writerow(head + (["confidence"] if conf is not None else []))
        for idx in np.ndindex(*table.shape):
            row = list(idx) + [int(table[idx])]
            if conf is not None:
                row.append(f"{conf[idx]:.6f}")
            writer.writerow(row)


def _cmd_export_rules(args):
    try:
        blob = load_checkpoint(args.ckpt)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_DATA
    prefix = "export.aligned." if args.align else "export.raw."
    names = sorted(k[len(prefix):] for k in blob if k.startswith(prefix))
    if not names:
        _err("checkpoint holds no exported rule tables")
        return EXIT_DATA
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    main = "rule" if "rule" in names else names[0]
    suffix = "_aligned" if args.align else ""
    for name in names:
        stem = "rules" if name == main else f"rules_{name}"
        path = out / f"{stem}{suffix}.csv"
        table = blob[prefix + name].astype(np.int64)
        if args.align:
            export_table_csv(path, table)
        else:
            _table_csv_rows(path, table, conf=blob.get(f"export.conf.{name}"))
        print(path)
    return EXIT_OK


def _cmd_render(args):
    try:
        blob = load_checkpoint(args.ckpt)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_DATA
    prefix = ("export.confusion." if args.kind == "confusion"
              else "export.aligned.")
    names = sorted(k[len(prefix):] for k in blob if k.startswith(prefix))
    if not names:
        _err(f"checkpoint holds no {args.kind} matrices")
        return EXIT_DATA
    if args.name is None:
        name = ("net" if "net" in names else
                "rule" if "rule" in names else names[0])
    elif args.name in names:
        name = args.name
    else:
        _err(f"no matrix named {args.name!r}; have {', '.join(names)}")
        return EXIT_DATA
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "confusion":
        write_pgm(out, blob[prefix + name])
    else:
        export_table_csv(out, blob[prefix + name].astype(np.int64))
    print(out)
    return EXIT_OK


def _cmd_verify_data(args):
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        _err(exc)
        return EXIT_CONFIG
    try:
        pools = build_pools(cfg)
        from .runner import _train_datasets

        checked = 0
        phases = ([1, 2] if cfg.task.name == "multidigit"
                  and cfg.train.phase1_epochs > 0 else [2])
        for phase in phases:
            for ds in _train_datasets(cfg, pools, cfg.train.seeds[0], phase):
                D.verify_dataset(ds)
                checked += len(ds)
        eval_ds = build_eval_dataset(cfg, pools)
        D.verify_dataset(eval_ds)
        checked += len(eval_ds)
    except (OSError, ValueError) as exc:
        _err(exc)
        return EXIT_DATA
    print(f"ok: {checked} samples verified")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "transfer": _cmd_transfer,
        "export-rules": _cmd_export_rules,
        "render": _cmd_render,
        "verify-data": _cmd_verify_data,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
