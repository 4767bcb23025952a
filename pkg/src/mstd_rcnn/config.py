"""Run configuration: an INI-style ``key = value`` file plus overrides.

Sections and keys (defaults in brackets)::

    [data]   source [synth], csv_path, seed [0], length [58000],
             start_price [3000.0], drifts [0.15,-0.15], noise [1.0],
             momentum [0.2], regime_min [50], regime_max [400],
             n_train [48000], n_dev [5000], n_test [5000],
             window [30], stride [1], threshold [auto]
    [model]  scales [1,2,3], n_filters [16], kernel_size [3],
             hidden_size [48], fc_sizes [] (empty = hidden_size//2,3),
             activation [relu], standardize [false]
    [train]  learning_rate [0.0005], batch_size [32], max_epochs [100],
             beta1 [0.9], beta2 [0.999], epsilon [1e-8], seed [0]
    [run]    output_dir [runs], profit_mode [position],
             ablation_scales [1;1,2;1,2,3], ablation_seeds [0,1,2,3,4]

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .backtest import MODES
from .data import SynthParams
from .model import ModelConfig
from .train import TrainConfig

__all__ = ["ConfigError", "DataConfig", "RunConfig", "load_config", "DEFAULTS", "OUTPUT_DIR_ENV"]

OUTPUT_DIR_ENV = "MSTD_RCNN_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "data": {
        "source": "synth",
        "csv_path": "",
        "seed": "0",
        "length": "58000",
        "start_price": "3000.0",
        "drifts": "0.15,-0.15",
        "noise": "1.0",
        "momentum": "0.2",
        "regime_min": "50",
        "regime_max": "400",
        "n_train": "48000",
        "n_dev": "5000",
        "n_test": "5000",
        "window": "30",
        "stride": "1",
        "threshold": "auto",
    },
    "model": {
        "scales": "1,2,3",
        "n_filters": "16",
        "kernel_size": "3",
        "hidden_size": "48",
        "fc_sizes": "",
        "activation": "relu",
        "standardize": "false",
    },
    "train": {
        "learning_rate": "0.0005",
        "batch_size": "32",
        "max_epochs": "100",
        "beta1": "0.9",
        "beta2": "0.999",
        "epsilon": "1e-8",
        "seed": "0",
    },
    "run": {
        "output_dir": "runs",
        "profit_mode": "position",
        "ablation_scales": "1;1,2;1,2,3",
        "ablation_seeds": "0,1,2,3,4",
    },
}


@dataclass(frozen=True)
class DataConfig:
    source: str
    csv_path: str
    seed: int
    length: int
    synth: SynthParams
    n_train: int
    n_dev: int
    n_test: int
    window: int
    stride: int
    threshold: float | None


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    model: ModelConfig
    train: TrainConfig
    output_dir: str
    profit_mode: str
    ablation_scales: tuple
    ablation_seeds: tuple
    raw: dict


def _int_list(text, sep=","):
    return tuple(int(v) for v in text.split(sep) if v.strip())


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _merge(path, overrides):
    raw = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(
            interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#")
        )
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for sec in parser.sections():
            if sec not in raw:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, value in parser.items(sec):
                if key not in raw[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                raw[sec][key] = value.strip()
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        raw["run"]["output_dir"] = env_dir
    for dotted, value in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in raw or key not in raw[sec]:
            raise ConfigError(f"unknown config key {dotted}")
        raw[sec][key] = str(value).strip()
    return raw


def load_config(path=None, overrides=None):
    """Defaults, then the file, then ``$MSTD_RCNN_OUTPUT_DIR``, then ``overrides``.

    ``overrides`` maps ``"section.key"`` to a value. Everything is parsed
    and validated here, before any command does work.
    """
    raw = _merge(path, overrides)
    d, m, t, r = raw["data"], raw["model"], raw["train"], raw["run"]
    try:
        if d["source"] not in ("synth", "csv"):
            raise ValueError("data.source must be 'synth' or 'csv'")
        if d["source"] == "csv" and not d["csv_path"]:
            raise ValueError("data.csv_path is required when data.source = csv")
        synth = SynthParams(
            start_price=float(d["start_price"]),
            drifts=_float_list(d["drifts"]),
            noise=float(d["noise"]),
            momentum=float(d["momentum"]),
            regime_min=int(d["regime_min"]),
            regime_max=int(d["regime_max"]),
        )
        threshold = None if d["threshold"].lower() == "auto" else float(d["threshold"])
        if threshold is not None and threshold <= 0:
            raise ValueError("data.threshold must be positive or 'auto'")
        data = DataConfig(
            source=d["source"],
            csv_path=d["csv_path"],
            seed=int(d["seed"]),
            length=int(d["length"]),
            synth=synth,
            n_train=int(d["n_train"]),
            n_dev=int(d["n_dev"]),
            n_test=int(d["n_test"]),
            window=int(d["window"]),
            stride=int(d["stride"]),
            threshold=threshold,
        )
        if data.length < 2:
            raise ValueError("data.length must be >= 2")
        if data.stride < 1:
            raise ValueError("data.stride must be >= 1")
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(data, name) < data.window + 1:
                raise ValueError(f"data.{name} must exceed data.window")
        fc = _int_list(m["fc_sizes"])
        model = ModelConfig(
            window=data.window,
            scales=_int_list(m["scales"]),
            n_filters=int(m["n_filters"]),
            kernel_size=int(m["kernel_size"]),
            hidden_size=int(m["hidden_size"]),
            fc_sizes=fc or None,
            activation=m["activation"],
            standardize=_bool(m["standardize"]),
        )
        train = TrainConfig(
            learning_rate=float(t["learning_rate"]),
            batch_size=int(t["batch_size"]),
            max_epochs=int(t["max_epochs"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            epsilon=float(t["epsilon"]),
            seed=int(t["seed"]),
        )
        if r["profit_mode"] not in MODES:
            raise ValueError(f"run.profit_mode must be one of {MODES}")
        ablation_scales = tuple(_int_list(part) for part in r["ablation_scales"].split(";") if part.strip())
        ablation_seeds = _int_list(r["ablation_seeds"])
        if not ablation_scales or not ablation_seeds:
            raise ValueError("run.ablation_scales and run.ablation_seeds must be non-empty")
        for scales in ablation_scales:
            ModelConfig(window=data.window, scales=scales, kernel_size=model.kernel_size)
        if not r["output_dir"]:
            raise ValueError("run.output_dir must not be empty")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        data=data,
        model=model,
        train=train,
        output_dir=r["output_dir"],
        profit_mode=r["profit_mode"],
        ablation_scales=ablation_scales,
        ablation_seeds=ablation_seeds,
        raw=raw,
    )
