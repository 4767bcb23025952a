"""Price series ingestion, trend labeling and dataset construction."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Trend",
    "TimeSeries",
    "LabeledDataset",
    "DatasetStats",
    "SynthParams",
    "DataError",
    "downsample",
    "delta",
    "deltas",
    "label",
    "label_array",
    "slice_windows",
    "select_threshold",
    "split_series",
    "chronological_split",
    "pearson",
    "synth_series",
    "stats",
    "standardize_windows",
    "read_csv",
    "write_csv",
]


class DataError(ValueError):
    """Malformed or insufficient input data."""


class Trend(enum.IntEnum):
    """Class indices used throughout the package."""

    STILL = 0
    DOWN = 1
    UP = 2

    @property
    def sign(self):
        return {Trend.STILL: 0, Trend.DOWN: -1, Trend.UP: 1}[self]


@dataclass(frozen=True)
class TimeSeries:
    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        px = np.asarray(self.prices, dtype=np.float64)
        if ts.ndim != 1 or px.shape != ts.shape:
            raise DataError("timestamps and prices must be 1-D and equally long")
        if len(px) < 2:
            raise DataError("a series needs at least two points")
        if np.any(np.diff(ts) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(px)):
            raise DataError("prices must be finite")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", px)

    def __len__(self):
        return len(self.prices)

    def segment(self, start, stop):
        return TimeSeries(self.timestamps[start:stop], self.prices[start:stop])


@dataclass(frozen=True)
class LabeledDataset:
    """Windows of length T with their next-step change and trend class.

    ``deltas[i]`` is the price change right after window ``i``; ``labels[i]``
    is that change classified with ``threshold``.
    """

    windows: np.ndarray
    labels: np.ndarray
    deltas: np.ndarray
    threshold: float
    split_tag: str = "train"
    starts: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        d = np.asarray(self.deltas, dtype=np.float64)
        if w.ndim != 2:
            raise DataError("windows must be a 2-D array (N, T)")
        if not (len(w) == len(y) == len(d)):
            raise DataError("windows, labels and deltas must have the same length")
        if self.split_tag not in ("train", "dev", "test"):
            raise DataError(f"unknown split tag {self.split_tag!r}")
        starts = np.arange(len(w)) if self.starts is None else np.asarray(self.starts, dtype=np.int64)
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "deltas", d)
        object.__setattr__(self, "starts", starts)

    def __len__(self):
        return len(self.labels)

    @property
    def window(self):
        return self.windows.shape[1]

    def subset(self, start, stop, split_tag=None):
        return LabeledDataset(
            self.windows[start:stop],
            self.labels[start:stop],
            self.deltas[start:stop],
            self.threshold,
            split_tag or self.split_tag,
            self.starts[start:stop],
        )


@dataclass(frozen=True)
class DatasetStats:
    mean: float
    std: float
    class_ratios: tuple

    def __str__(self):
        r = self.class_ratios
        return (
            f"mean={self.mean:.4f} std={self.std:.4f} "
            f"still={r[Trend.STILL]:.4f} down={r[Trend.DOWN]:.4f} up={r[Trend.UP]:.4f}"
        )


def downsample(x, d):
    """Keep every ``d``-th point: ``[x_d, x_2d, ..., x_md]`` with ``m = len(x) // d``."""
    x = np.asarray(x)
    if d < 1:
        raise ValueError("down-sampling rate must be >= 1")
    if d > len(x):
        raise ValueError(f"rate {d} exceeds sequence length {len(x)}")
    m = len(x) // d
    return x[d - 1 : m * d : d]


def delta(x_t, x_prev):
    return x_t - x_prev


def deltas(prices):
    return np.diff(np.asarray(prices, dtype=np.float64))


def label(dx, threshold):
    """Trend class of a single change; both boundaries go to the directional class."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if dx <= -threshold:
        return Trend.DOWN
    if dx >= threshold:
        return Trend.UP
    return Trend.STILL


def label_array(dx, threshold):
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    dx = np.asarray(dx, dtype=np.float64)
    out = np.full(dx.shape, int(Trend.STILL), dtype=np.int64)
    out[dx <= -threshold] = Trend.DOWN
    out[dx >= threshold] = Trend.UP
    return out


def slice_windows(series, window, threshold, stride=1, split_tag="train"):
    """Cut (possibly overlapping) windows out of a series.

    Window ``i`` starts at ``i * stride`` and covers ``window`` prices; its
    label comes from the price right after it. There are
    ``(len(series) - window) // stride`` windows.
    """
    prices = series.prices if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if len(prices) < window + 1:
        raise DataError(f"series of length {len(prices)} is too short for window {window}")
    n = (len(prices) - window) // stride
    starts = np.arange(n) * stride
    idx = starts[:, None] + np.arange(window)[None, :]
    windows = prices[idx]
    dx = prices[starts + window] - prices[starts + window - 1]
    return LabeledDataset(windows, label_array(dx, threshold), dx, threshold, split_tag, starts)


def select_threshold(dev_deltas):
    """Threshold that makes the three classes as equally frequent as possible.

    Candidates are the distinct non-zero ``|dx|`` values and the midpoints
    between consecutive ones. The score is the largest deviation of a class
    ratio from 1/3; ties go to the smallest threshold.
    """
    dx = np.asarray(dev_deltas, dtype=np.float64)
    if dx.size < 3:
        raise DataError("need at least three changes to choose a threshold")
    mags = np.unique(np.abs(dx))
    mags = mags[mags > 0]
    if mags.size == 0:
        raise DataError("all changes are zero; no threshold separates the classes")
    all_mags = np.unique(np.abs(dx))
    mids = (all_mags[:-1] + all_mags[1:]) / 2.0
    candidates = np.unique(np.concatenate([mags, mids[mids > 0]]))

    n = dx.size
    neg_abs = np.sort(-dx[dx < 0])
    pos = np.sort(dx[dx > 0])
    down = len(neg_abs) - np.searchsorted(neg_abs, candidates, side="left")
    up = len(pos) - np.searchsorted(pos, candidates, side="left")
    still = n - down - up
    ratios = np.stack([still, down, up]) / n
    score = np.abs(ratios - 1.0 / 3.0).max(axis=0)
    # argmin returns the first minimum, i.e. the smallest candidate
    return float(candidates[int(np.argmin(score))])


def split_series(series, n_train, n_dev, n_test):
    """Contiguous train/dev/test segments of a raw series, in time order."""
    total = n_train + n_dev + n_test
    if min(n_train, n_dev, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    if total > len(series):
        raise DataError(f"split needs {total} points but the series has {len(series)}")
    a, b = n_train, n_train + n_dev
    return series.segment(0, a), series.segment(a, b), series.segment(b, total)


def chronological_split(ds, n_train, n_dev, n_test):
    total = n_train + n_dev + n_test
    if min(n_train, n_dev, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    if total > len(ds):
        raise DataError(f"split needs {total} samples but the dataset has {len(ds)}")
    a, b = n_train, n_train + n_dev
    return ds.subset(0, a, "train"), ds.subset(a, b, "dev"), ds.subset(b, total, "test")


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two 1-D sequences of equal length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(xc @ xc)
    sy = np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise ValueError("correlation is undefined for a constant sequence")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


@dataclass(frozen=True)
class SynthParams:
    """Regime-switching random walk.

    Each regime lasts a uniform random number of steps in
    ``[regime_min, regime_max]``; regimes cycle through ``drifts``. Within
    a regime the step is ``drift + momentum * (prev_step - drift) + noise * N(0, 1)``.
    """

    start_price: float = 3000.0
    drifts: tuple = (0.15, -0.15)
    noise: float = 1.0
    momentum: float = 0.2
    regime_min: int = 50
    regime_max: int = 400
    start_timestamp: int = 0

    def __post_init__(self):
        if not self.drifts:
            raise ValueError("at least one regime drift is required")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not -1.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (-1, 1)")
        if not 1 <= self.regime_min <= self.regime_max:
            raise ValueError("need 1 <= regime_min <= regime_max")


def synth_series(seed, length, params=None):
    if length < 2:
        raise ValueError("length must be >= 2")
    params = params or SynthParams()
    rng = np.random.default_rng(seed)
    drift = np.empty(length - 1)
    pos, k = 0, 0
    while pos < length - 1:
        run = int(rng.integers(params.regime_min, params.regime_max + 1))
        drift[pos : pos + run] = params.drifts[k % len(params.drifts)]
        pos += run
        k += 1
    eps = rng.standard_normal(length - 1)
    steps = np.empty(length - 1)
    prev = drift[0]
    for t in range(length - 1):
        prev = drift[t] + params.momentum * (prev - drift[t]) + params.noise * eps[t]
        steps[t] = prev
    prices = params.start_price + np.concatenate([[0.0], np.cumsum(steps)])
    timestamps = params.start_timestamp + np.arange(length, dtype=np.int64)
    return TimeSeries(timestamps, prices)


def stats(ds):
    """Mean/std of the next-step changes and class ratios of a dataset."""
    if len(ds) == 0:
        raise DataError("stats of an empty dataset")
    counts = np.bincount(ds.labels, minlength=3)[:3]
    ratios = tuple(float(c) / len(ds) for c in counts)
    return DatasetStats(float(ds.deltas.mean()), float(ds.deltas.std()), ratios)


def standardize_windows(windows):
    """Per-window z-scoring; constant windows are only centred."""
    w = np.asarray(windows, dtype=np.float64)
    centred = w - w.mean(axis=-1, keepdims=True)
    sd = w.std(axis=-1, keepdims=True)
    return centred / np.where(sd > 0, sd, 1.0)


def read_csv(source):
    """Read a ``timestamp,price`` CSV file (path or open text stream)."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_rows(fh)
    return _read_rows(source)


def _read_rows(fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["timestamp", "price"]:
        raise DataError("CSV header must be 'timestamp,price'")
    ts, px = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts.append(int(row[0]))
            px.append(float(row[1]))
        except ValueError:
            raise DataError(f"line {lineno}: cannot parse {row!r}") from None
    return TimeSeries(np.array(ts, dtype=np.int64), np.array(px, dtype=np.float64))


def write_csv(series, dest=None):
    """Write a series as CSV; returns the text when ``dest`` is None."""
    buf = io.StringIO()
    buf.write("timestamp,price\n")
    for t, p in zip(series.timestamps, series.prices):
        buf.write(f"{int(t)},{float(p)!r}\n")
    text = buf.getvalue()
    if dest is None:
        return text
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return None
