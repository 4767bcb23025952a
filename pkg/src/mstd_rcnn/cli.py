"""Command-line interface: ``mstd-rcnn {synth,train,eval,backtest,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import backtest as bt
from . import data as D
from . import metrics
from . import numerics as nx
from .config import ConfigError, load_config
from .train import (
    CheckpointCorruptError,
    CheckpointFormatError,
    TrainingDiverged,
    format_log,
    load_checkpoint,
    checkpoint_bytes,
    predict_proba,
    train,
    with_meta,
)

log = logging.getLogger("mstd_rcnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLITS = ("train", "dev", "test")


def _write_atomic(path, payload):
    """Write bytes or text so that readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Prepared:
    segments: dict
    datasets: dict
    threshold: float


def load_series(cfg):
    if cfg.data.source == "csv":
        try:
            return D.read_csv(cfg.data.csv_path)
        except OSError as exc:
            raise D.DataError(f"cannot read {cfg.data.csv_path}: {exc}") from None
    return D.synth_series(cfg.data.seed, cfg.data.length, cfg.data.synth)


def prepare(cfg, threshold=None):
    """Split the raw series chronologically, pick the threshold, slice windows."""
    dc = cfg.data
    series = load_series(cfg)
    if dc.source == "synth" and dc.n_train + dc.n_dev + dc.n_test > len(series):
        raise ConfigError(
            f"data.n_train + n_dev + n_test = {dc.n_train + dc.n_dev + dc.n_test} exceeds the {len(series)}-point series"
        )
    parts = dict(zip(SPLITS, D.split_series(series, dc.n_train, dc.n_dev, dc.n_test)))
    if threshold is None:
        threshold = dc.threshold
    if threshold is None:
        dev = D.slice_windows(parts["dev"], dc.window, 1.0, dc.stride, "dev")
        threshold = D.select_threshold(dev.deltas)
    datasets = {
        name: D.slice_windows(seg, dc.window, threshold, dc.stride, name) for name, seg in parts.items()
    }
    return Prepared(parts, datasets, float(threshold))


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def cmd_synth(cfg, out_path=None):
    series = D.synth_series(cfg.data.seed, cfg.data.length, cfg.data.synth)
    path = out_path or _out(cfg, "series.csv")
    _write_atomic(path, D.write_csv(series))
    log.info("wrote %d points to %s", len(series), path)
    return path


def _fit(cfg, prepared, model_cfg=None, train_cfg=None):
    return train(
        prepared.datasets["train"],
        prepared.datasets["dev"],
        model_cfg or cfg.model,
        train_cfg or cfg.train,
        on_epoch=lambda r: log.info(
            "epoch %d train_loss %.5f dev_acc %.4f dev_f1 %.4f", r.epoch, r.train_loss, r.dev_acc, r.dev_f1
        ),
    )


def cmd_train(cfg):
    prepared = prepare(cfg)
    result = _fit(cfg, prepared)
    best = with_meta(result.best, threshold=repr(prepared.threshold))
    last = with_meta(result.last, threshold=repr(prepared.threshold))
    paths = {
        "best": _out(cfg, "best.ckpt"),
        "last": _out(cfg, "last.ckpt"),
        "log": _out(cfg, "train_log.csv"),
    }
    _write_atomic(paths["best"], checkpoint_bytes(best))
    _write_atomic(paths["last"], checkpoint_bytes(last))
    _write_atomic(paths["log"], format_log(result.history))
    print(
        f"threshold {prepared.threshold:.6g}; best epoch {best.epoch} "
        f"dev_acc {best.dev_acc:.4f} dev_f1 {best.dev_f1:.4f}"
    )
    return paths


def _load_for(cfg, checkpoint):
    path = checkpoint or _out(cfg, "best.ckpt")
    try:
        ckpt = load_checkpoint(path)
    except OSError as exc:
        raise D.DataError(f"cannot read checkpoint {path}: {exc}") from None
    if ckpt.model_config.window != cfg.data.window:
        raise ConfigError("checkpoint window length differs from data.window")
    threshold = float(ckpt.meta["threshold"]) if "threshold" in ckpt.meta else None
    return ckpt, prepare(cfg, threshold)


def evaluation_report(name, preds, truths, stats=None):
    cm = metrics.confusion(preds, truths)
    acc, f1 = metrics.accuracy(cm), metrics.f1_weighted(cm)
    lines = [
        metrics.format_table([(name, {"ACC": f"{acc:.4f}", "F1": f"{f1:.4f}"})]),
        "",
        f"macro_f1 {metrics.f1_macro(cm):.4f}",
    ]
    if stats is not None:
        lines.append(f"labels {stats}")
    lines += ["", "confusion (rows=true, cols=predicted)", metrics.format_confusion(cm)]
    return "\n".join(lines) + "\n", cm


def cmd_eval(cfg, checkpoint=None, split="test"):
    ckpt, prepared = _load_for(cfg, checkpoint)
    ds = prepared.datasets[split]
    preds = predict_proba(ckpt.params, ds.windows).argmax(axis=1)
    report, cm = evaluation_report(_model_name(ckpt.model_config.scales), preds, ds.labels, D.stats(ds))
    path = _out(cfg, f"eval_{split}.txt")
    _write_atomic(path, report)
    print(report, end="")
    return path, cm


def _model_name(scales):
    return "(" + ",".join(str(s) for s in scales) + ") MSTD-RCNN"


def cmd_backtest(cfg, checkpoint=None, split="test", mode=None):
    mode = mode or cfg.profit_mode
    ckpt, prepared = _load_for(cfg, checkpoint)
    ds = prepared.datasets[split]
    preds = predict_proba(ckpt.params, ds.windows).argmax(axis=1)
    ledger = bt.simulate(preds, ds.labels, bt.trading_deltas(ds.deltas, ds.labels), mode)
    bh = bt.buy_and_hold(prepared.segments[split].prices)
    summary = "profits of simulated trading (" + mode + " mode, " + split + ")\n"
    summary += metrics.format_table(
        [("B&H", {"Profit": f"{bh:.2f}"}), (_model_name(ckpt.model_config.scales), {"Profit": f"{ledger.total:.2f}"})],
        columns=("Profit",),
        first="Strategies",
    ) + "\n"
    paths = {
        "ledger": _out(cfg, f"backtest_{split}_{mode}.csv"),
        "summary": _out(cfg, f"backtest_{split}_{mode}.txt"),
    }
    _write_atomic(paths["ledger"], ledger.to_csv())
    _write_atomic(paths["summary"], summary)
    print(summary, end="")
    return paths, ledger, bh


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.4f}±{arr.std():.4f}"


def cmd_ablate(cfg):
    """Train every scale setting for every seed and summarise test accuracy and F1."""
    prepared = prepare(cfg)
    test = prepared.datasets["test"]
    runs = []
    for scales in cfg.ablation_scales:
        model_cfg = replace(cfg.model, scales=tuple(scales))
        for seed in cfg.ablation_seeds:
            result = _fit(cfg, prepared, model_cfg, replace(cfg.train, seed=seed))
            best = result.best
            initial = result.history[0].train_loss
            best_loss = next(r.train_loss for r in result.history if r.epoch == best.epoch)
            preds = predict_proba(best.params, test.windows).argmax(axis=1)
            cm = metrics.confusion(preds, test.labels)
            runs.append(
                {
                    "scales": tuple(scales),
                    "seed": seed,
                    "best_epoch": best.epoch,
                    "initial_loss": initial,
                    "best_loss": best_loss,
                    "loss_drop": 1.0 - best_loss / initial,
                    "dev_acc": best.dev_acc,
                    "test_acc": metrics.accuracy(cm),
                    "test_f1": metrics.f1_weighted(cm),
                }
            )
            log.info("scales %s seed %d: %s", scales, seed, runs[-1])
    rows = []
    for scales in cfg.ablation_scales:
        sel = [r for r in runs if r["scales"] == tuple(scales)]
        rows.append(
            (
                _model_name(scales),
                {
                    "ACC": _mean_std([r["test_acc"] for r in sel]),
                    "F1": _mean_std([r["test_f1"] for r in sel]),
                    "LossDrop": _mean_std([r["loss_drop"] for r in sel]),
                },
            )
        )
    report = (
        f"Effects of multi-scale features (test split, {len(cfg.ablation_seeds)} seeds, mean±std)\n"
        + metrics.format_table(rows, columns=("ACC", "F1", "LossDrop"))
        + "\n"
    )
    cols = list(runs[0])
    table = ",".join(cols) + "\n"
    for r in runs:
        table += ",".join(
            " ".join(map(str, r[c])) if c == "scales" else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
            for c in cols
        ) + "\n"
    paths = {"report": _out(cfg, "ablation.txt"), "runs": _out(cfg, "ablation_runs.csv")}
    _write_atomic(paths["report"], report)
    _write_atomic(paths["runs"], table)
    print(report, end="")
    return paths, runs


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI-style run configuration")
    common.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value"
    )
    common.add_argument("-o", "--output-dir", help="output directory (overrides config and environment)")
    common.add_argument("--seed", type=int, help="training seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mstd-rcnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic price series as CSV")
    s.add_argument("--length", type=int)
    s.add_argument("--out", help="output CSV path (default <output_dir>/series.csv)")
    t = sub.add_parser("train", parents=[common], help="train and save the best checkpoint")
    t.add_argument("--scales", help="e.g. 1 or 1,2 or 1,2,3")
    t.add_argument("--epochs", type=int)
    for name in ("eval", "backtest"):
        e = sub.add_parser(name, parents=[common], help=f"{name} a checkpoint on a split")
        e.add_argument("--checkpoint", help="default <output_dir>/best.ckpt")
        e.add_argument("--split", choices=SPLITS, default="test")
        if name == "backtest":
            e.add_argument("--mode", choices=bt.MODES)
    a = sub.add_parser("ablate", parents=[common], help="train each scale setting for several seeds")
    a.add_argument("--epochs", type=int)
    a.add_argument("--seeds", help="comma-separated training seeds")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.output_dir:
        out["run.output_dir"] = args.output_dir
    if args.seed is not None:
        out["train.seed"] = args.seed
    if getattr(args, "length", None) is not None:
        out["data.length"] = args.length
    if getattr(args, "scales", None):
        out["model.scales"] = args.scales
    if getattr(args, "epochs", None) is not None:
        out["train.max_epochs"] = args.epochs
    if getattr(args, "seeds", None):
        out["run.ablation_seeds"] = args.seeds
    return out


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.split)
        elif args.command == "backtest":
            cmd_backtest(cfg, args.checkpoint, args.split, args.mode)
        elif args.command == "ablate":
            cmd_ablate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (D.DataError, CheckpointFormatError, CheckpointCorruptError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, nx.NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
