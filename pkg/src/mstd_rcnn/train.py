"""Mini-batch Adam training with dev-set model selection and checkpoints."""

from __future__ import annotations

import io
import logging
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from . import numerics as nx
from .model import ModelConfig, ModelParams, cross_entropy, forward

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "EpochRecord",
    "Checkpoint",
    "TrainResult",
    "TrainingDiverged",
    "CheckpointFormatError",
    "CheckpointCorruptError",
    "train",
    "train_arrays",
    "predict_proba",
    "evaluate_loss",
    "save_checkpoint",
    "load_checkpoint",
    "format_log",
]

log = logging.getLogger(__name__)

MAGIC = b"MSTDRCNN"
VERSION = 1
EVAL_CHUNK = 2048


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 32
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(
            {n: np.zeros_like(a) for n, a in params.arrays.items()},
            {n: np.zeros_like(a) for n, a in params.arrays.items()},
        )

    def copy(self):
        return AdamState(
            {n: a.copy() for n, a in self.m.items()},
            {n: a.copy() for n, a in self.v.items()},
            self.step,
        )


def adam_step(params, grads, state, cfg):
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``params`` and ``grads`` are dicts of arrays keyed by parameter name;
    ``state.step`` is incremented before use, so the first call uses t=1.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise nx.NumericalError(
                f"non-finite gradient for {name}: {bad} of {g.size} entries (step {state.step + 1})"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise nx.DimensionError(f"gradient for {name} has shape {g.shape}")
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[name] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc: float
    dev_f1: float
    dev_f1_macro: float = float("nan")

    def line(self):
        return f"{self.epoch},{self.train_loss!r},{self.dev_acc!r},{self.dev_f1!r}"


def format_log(records):
    return "epoch,train_loss,dev_acc,dev_f1\n" + "".join(r.line() + "\n" for r in records)


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: AdamState
    epoch: int
    train_config: TrainConfig
    dev_acc: float = float("nan")
    dev_f1: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def model_config(self):
        return self.params.config

    def copy(self):
        return Checkpoint(
            self.params.copy(),
            self.optimizer.copy(),
            self.epoch,
            self.train_config,
            self.dev_acc,
            self.dev_f1,
            dict(self.meta),
        )


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list

    @property
    def best_epoch(self):
        return self.best.epoch


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good):
        super().__init__(message)
        self.last_good = last_good


def predict_proba(params, X):
    X = np.asarray(X, dtype=np.float64)
    out = [forward(X[i : i + EVAL_CHUNK], params).data for i in range(0, len(X), EVAL_CHUNK)]
    if not out:
        return np.zeros((0, params.config.n_classes))
    return np.concatenate(out)


def evaluate_loss(params, X, y):
    """Mean cross-entropy over a whole dataset (no tape)."""
    y = np.asarray(y)
    total = 0.0
    for i in range(0, len(X), EVAL_CHUNK):
        probs = forward(X[i : i + EVAL_CHUNK], params)
        total += cross_entropy(probs, y[i : i + EVAL_CHUNK]).item() * len(probs.data)
    return total / len(X)


def _dev_scores(params, X_dev, y_dev):
    if X_dev is None or len(X_dev) == 0:
        nan = float("nan")
        return nan, nan, nan
    preds = predict_proba(params, X_dev).argmax(axis=1)
    cm = metrics.confusion(preds, y_dev, params.config.n_classes)
    return metrics.accuracy(cm), metrics.f1_weighted(cm), metrics.f1_macro(cm)


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_arrays(X, y, X_dev, y_dev, model_cfg, train_cfg, resume=None, on_epoch=None):
    """Train on arrays; see :func:`train`."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if X.ndim != 2 or X.shape[1] != model_cfg.window:
        raise ValueError(f"training windows must have shape (N, {model_cfg.window})")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if X_dev is not None:
        X_dev = np.asarray(X_dev, dtype=np.float64)
        y_dev = np.asarray(y_dev, dtype=np.int64)
        if len(X_dev) and X_dev.shape[1] != model_cfg.window:
            raise ValueError("dev windows have a different length than training windows")
    use_dev = X_dev is not None and len(X_dev) > 0

    if resume is not None:
        if resume.model_config != model_cfg:
            raise ValueError("checkpoint model configuration does not match")
        params = resume.params.copy()
        state = resume.optimizer.copy()
        start = resume.epoch
        history = []
    else:
        params = ModelParams.initialize(model_cfg, train_cfg.seed)
        state = AdamState.zeros(params)
        start = 0
        acc, f1, f1m = _dev_scores(params, X_dev, y_dev)
        history = [EpochRecord(0, evaluate_loss(params, X, y), acc, f1, f1m)]
        if on_epoch:
            on_epoch(history[-1])

    def snapshot(epoch, acc, f1):
        return Checkpoint(params.copy(), state.copy(), epoch, train_cfg, acc, f1)

    best = None
    if resume is not None:
        best = resume.copy()
    elif train_cfg.max_epochs == 0:
        best = snapshot(0, history[0].dev_acc, history[0].dev_f1)
    last = best

    n = len(X)
    for epoch in range(start + 1, train_cfg.max_epochs + 1):
        order = _epoch_order(train_cfg.seed, epoch, n)
        try:
            for lo in range(0, n, train_cfg.batch_size):
                idx = order[lo : lo + train_cfg.batch_size]
                tensors = params.tensors()
                with nx.GradTape() as tape:
                    loss = cross_entropy(forward(X[idx], params, tensors), y[idx])
                grads = tape.backward(loss, list(tensors.values()))
                adam_step(params.arrays, dict(zip(tensors, grads)), state, train_cfg)
            train_loss = evaluate_loss(params, X, y)
        except nx.NumericalError as exc:
            good = last.epoch if last is not None else 0
            raise TrainingDiverged(
                f"training diverged in epoch {epoch} ({exc}); last good epoch {good}", last
            ) from exc
        acc, f1, f1m = _dev_scores(params, X_dev, y_dev)
        record = EpochRecord(epoch, train_loss, acc, f1, f1m)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        log.debug("epoch %d loss %.6f dev_acc %.4f dev_f1 %.4f", epoch, train_loss, acc, f1)
        last = snapshot(epoch, acc, f1)
        if not use_dev:
            best = last
        elif best is None or acc > best.dev_acc:
            best = last
    return TrainResult(best, last, history)


def train(train_ds, dev_ds, model_cfg, train_cfg, resume=None, on_epoch=None):
    """Fit the network on a labeled dataset, selecting by dev accuracy.

    Every epoch visits the training windows in a permutation seeded by
    ``(seed, epoch)`` and ends with a full-pass training loss and the dev
    accuracy/F1. Epoch 0 in the history is the untrained model. The best
    checkpoint is the earliest epoch with the highest dev accuracy (the
    last epoch when no dev set is given). Passing the ``last`` checkpoint
    of an earlier run as ``resume`` continues that run exactly.
    """
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    if dev_ds is not None and len(dev_ds) and dev_ds.window != train_ds.window:
        raise ValueError("train and dev windows differ in length")
    X_dev = dev_ds.windows if dev_ds is not None else None
    y_dev = dev_ds.labels if dev_ds is not None else None
    return train_arrays(
        train_ds.windows, train_ds.labels, X_dev, y_dev, model_cfg, train_cfg, resume, on_epoch
    )


# -- checkpoint files ---------------------------------------------------------
#
# layout: MAGIC | u32 version | u64 header length | header (utf-8 "key = value"
# lines) | tensors as little-endian f64, in header order | u32 crc32 of all
# preceding bytes


class CheckpointFormatError(ValueError):
    pass


class CheckpointCorruptError(ValueError):
    pass


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _model_items(cfg):
    return [
        ("model.window", cfg.window),
        ("model.scales", cfg.scales),
        ("model.n_filters", cfg.n_filters),
        ("model.kernel_size", cfg.kernel_size),
        ("model.hidden_size", cfg.hidden_size),
        ("model.fc_sizes", cfg.fc_sizes),
        ("model.n_classes", cfg.n_classes),
        ("model.activation", cfg.activation),
        ("model.standardize", cfg.standardize),
    ]


def _train_items(cfg):
    return [
        ("train.learning_rate", float(cfg.learning_rate)),
        ("train.batch_size", cfg.batch_size),
        ("train.max_epochs", cfg.max_epochs),
        ("train.beta1", float(cfg.beta1)),
        ("train.beta2", float(cfg.beta2)),
        ("train.epsilon", float(cfg.epsilon)),
        ("train.seed", cfg.seed),
    ]


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_model(h):
    return ModelConfig(
        window=int(h["model.window"]),
        scales=_ints(h["model.scales"]),
        n_filters=int(h["model.n_filters"]),
        kernel_size=int(h["model.kernel_size"]),
        hidden_size=int(h["model.hidden_size"]),
        fc_sizes=_ints(h["model.fc_sizes"]),
        n_classes=int(h["model.n_classes"]),
        activation=h["model.activation"],
        standardize=h["model.standardize"] == "true",
    )


def _parse_train(h):
    return TrainConfig(
        learning_rate=float(h["train.learning_rate"]),
        batch_size=int(h["train.batch_size"]),
        max_epochs=int(h["train.max_epochs"]),
        beta1=float(h["train.beta1"]),
        beta2=float(h["train.beta2"]),
        epsilon=float(h["train.epsilon"]),
        seed=int(h["train.seed"]),
    )


def _tensor_list(ckpt):
    out = []
    for name, arr in ckpt.params.arrays.items():
        out.append((f"param.{name}", arr))
    for name, arr in ckpt.optimizer.m.items():
        out.append((f"adam_m.{name}", arr))
    for name, arr in ckpt.optimizer.v.items():
        out.append((f"adam_v.{name}", arr))
    return out


def checkpoint_bytes(ckpt):
    items = _model_items(ckpt.model_config) + _train_items(ckpt.train_config)
    items += [
        ("epoch", ckpt.epoch),
        ("adam.step", ckpt.optimizer.step),
        ("dev_acc", float(ckpt.dev_acc)),
        ("dev_f1", float(ckpt.dev_f1)),
    ]
    for key in sorted(ckpt.meta):
        if "\n" in str(ckpt.meta[key]) or "=" in key:
            raise ValueError(f"metadata {key!r} cannot be stored in a header line")
        items.append((f"meta.{key}", ckpt.meta[key]))
    tensors = _tensor_list(ckpt)
    for name, arr in tensors:
        items.append((f"tensor.{name}", "x".join(str(s) for s in arr.shape)))
    header = "".join(f"{k} = {_fmt(v)}\n" for k, v in items).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(header)))
    buf.write(header)
    for _, arr in tensors:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ckpt, path):
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return checkpoint_from_bytes(blob)


def checkpoint_from_bytes(blob):
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(blob) < pos + 12:
        raise CheckpointCorruptError("checkpoint truncated in preamble")
    version, hlen = struct.unpack_from("<IQ", blob, pos)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    pos += 12
    if len(blob) < pos + hlen:
        raise CheckpointCorruptError("checkpoint truncated in header")
    try:
        text = blob[pos : pos + hlen].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointCorruptError("checkpoint header is not valid utf-8") from None
    pos += hlen
    header, shapes = {}, []
    for line in text.splitlines():
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointCorruptError(f"malformed header line {line!r}")
        if key.startswith("tensor."):
            shape = tuple(int(s) for s in value.split("x")) if value else ()
            shapes.append((key[len("tensor.") :], shape))
        else:
            header[key] = value
    need = sum(int(np.prod(s)) for _, s in shapes) * 8
    if len(blob) < pos + need + 4:
        raise CheckpointCorruptError("checkpoint truncated in tensor data")
    if len(blob) > pos + need + 4:
        raise CheckpointCorruptError("trailing bytes after checkpoint data")
    (crc,) = struct.unpack_from("<I", blob, pos + need)
    if crc != zlib.crc32(blob[: pos + need]):
        raise CheckpointCorruptError("checkpoint checksum mismatch")

    arrays = {"param": {}, "adam_m": {}, "adam_v": {}}
    for name, shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += count * 8
        group, _, pname = name.partition(".")
        if group not in arrays:
            raise CheckpointCorruptError(f"unknown tensor group {group!r}")
        arrays[group][pname] = arr.reshape(shape)
    try:
        model_cfg = _parse_model(header)
        train_cfg = _parse_train(header)
        params = ModelParams(model_cfg, arrays["param"])
    except (KeyError, ValueError) as exc:
        raise CheckpointCorruptError(f"inconsistent checkpoint header: {exc}") from None
    state = AdamState(arrays["adam_m"], arrays["adam_v"], int(header["adam.step"]))
    meta = {k[len("meta.") :]: v for k, v in header.items() if k.startswith("meta.")}
    return Checkpoint(
        params,
        state,
        int(header["epoch"]),
        train_cfg,
        float(header["dev_acc"]),
        float(header["dev_f1"]),
        meta,
    )


def with_meta(ckpt, **meta):
    out = replace(ckpt, meta={**ckpt.meta, **{k: str(v) for k, v in meta.items()}})
    return out
