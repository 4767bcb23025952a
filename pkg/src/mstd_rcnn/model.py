"""Multi-scale recurrent convolutional network.

Pipeline for a batch of windows ``X`` of shape ``(B, T)``:

1. down-sample each window at every rate ``d`` in ``scales``;
2. convolve each down-sampled sequence with ``n_filters`` kernels of width
   ``kernel_size`` (valid positions, stride 1, no pooling);
3. left-pad every feature map with zeros to length ``T - k + 1`` and stack
   them, scale-major then filter, into the feature matrix ``E``;
4. run a GRU over the columns of ``E`` from a zero state;
5. map the last hidden state through fully-connected layers to softmax
   class probabilities.

Batched tensors use a row per sample. A feature map of ``L`` positions and
``l`` filters is stored flat as ``(B, L * l)`` with column ``p * l + j``;
the feature matrix is ``(B, L * F)`` with column ``t * F + f``, so that
column block ``t`` is the GRU input at step ``t``. Weight matrices act on
row vectors (``e @ W``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import standardize_windows

__all__ = [
    "ModelConfig",
    "ModelParams",
    "conv1d",
    "pad_left",
    "concat_features",
    "feature_matrix",
    "gru_step",
    "encode",
    "head",
    "forward",
    "cross_entropy",
    "LOG_FLOOR",
]

LOG_FLOOR = 1e-12
ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


@dataclass(frozen=True)
class ModelConfig:
    window: int = 30
    scales: tuple = (1, 2, 3)
    n_filters: int = 16
    kernel_size: int = 3
    hidden_size: int = 48
    fc_sizes: tuple = None
    n_classes: int = 3
    activation: str = "relu"
    standardize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.fc_sizes is None:
            fc = (max(1, self.hidden_size // 2), self.n_classes)
        else:
            fc = tuple(int(s) for s in self.fc_sizes)
        object.__setattr__(self, "fc_sizes", fc)
        self.validate()

    def validate(self):
        s = self.scales
        if not s or s[0] != 1 or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError(f"scales must be distinct, ascending and start at 1, got {s}")
        for name in ("n_filters", "hidden_size", "n_classes", "kernel_size", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_size > self.window // s[-1]:
            raise ValueError(
                f"kernel_size={self.kernel_size} exceeds the coarsest scale length "
                f"{self.window // s[-1]} (window={self.window}, scale={s[-1]})"
            )
        if not self.fc_sizes or self.fc_sizes[-1] != self.n_classes or min(self.fc_sizes) < 1:
            raise ValueError(f"fc_sizes must be positive and end with n_classes, got {self.fc_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_features(self):
        return len(self.scales) * self.n_filters

    @property
    def n_steps(self):
        return self.window - self.kernel_size + 1

    def scale_length(self, d):
        return self.window // d


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Named parameter arrays in a fixed declaration order."""

    def __init__(self, config, arrays):
        self.config = config
        self.arrays = dict(arrays)
        expected = self.layout(config)
        if list(self.arrays) != [n for n, _ in expected]:
            raise ValueError("parameter names/order do not match the configuration")
        for name, shape in expected:
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise nx.NumericalError(f"{name}: non-finite values")

    @staticmethod
    def layout(config):
        k, l, q, F = config.kernel_size, config.n_filters, config.hidden_size, config.n_features
        out = []
        for d in config.scales:
            out += [(f"conv{d}.w", (k, l)), (f"conv{d}.b", (1, l))]
        for gate in ("r", "z", "h"):
            out += [(f"gru.W_{gate}", (F, q)), (f"gru.U_{gate}", (q, q))]
        widths = (q,) + config.fc_sizes
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            out += [(f"fc{i}.w", (a, b)), (f"fc{i}.b", (1, b))]
        return out

    @classmethod
    def initialize(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in cls.layout(config):
            if name.endswith(".b"):
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = _glorot(rng, shape[0], shape[1], shape)
        return cls(config, arrays)

    def names(self):
        return list(self.arrays)

    def tensors(self):
        return {n: nx.Tensor(a, requires_grad=True, name=n) for n, a in self.arrays.items()}

    def copy(self):
        return ModelParams(self.config, {n: a.copy() for n, a in self.arrays.items()})

    def n_parameters(self):
        return sum(a.size for a in self.arrays.values())


def _activate(x, activation):
    return nx.elementwise(activation, x)


def conv1d(x, w, b, activation="relu"):
    """Valid 1-D convolution of every row of ``x`` with a bank of kernels.

    ``x`` is ``(B, m)``, ``w`` is ``(k, l)`` (one kernel per column) and ``b``
    is ``(1, l)``. Returns ``(B, (m - k + 1) * l)``, position-major. 1-D
    ``x``/``w`` and a scalar ``b`` are accepted for the single-filter case.
    """
    x, w, b = nx.as_tensor(x), nx.as_tensor(w), nx.as_tensor(b)
    if x.data.ndim == 1:
        x = nx.reshape(x, (1, x.size))
    if w.data.ndim == 1:
        w = nx.reshape(w, (w.size, 1))
    k, l = w.shape
    if b.size == 1 and b.shape != (1, l):
        b = nx.reshape(b, (1, 1))
    if b.shape != (1, l):
        raise nx.DimensionError(f"bias shape {b.shape}, expected (1, {l})")
    n_rows, m = x.shape
    if m < k:
        raise nx.DimensionError(f"sequence length {m} shorter than kernel width {k}")
    L = m - k + 1
    # im2col: row (i, p) holds x[i, p:p+k]
    idx = (np.arange(n_rows)[:, None, None] * m + np.arange(L)[None, :, None] + np.arange(k)[None, None, :])
    patches = nx.gather(x, idx.reshape(n_rows * L, k))
    pre = nx.add(nx.matmul(patches, w), nx.repeat_rows(b, n_rows * L))
    return nx.reshape(_activate(pre, activation), (n_rows, L * l))


def pad_left(c, T, k, n_filters=1):
    """Prepend zero positions so a flat feature map spans ``T - k + 1`` positions."""
    c = nx.as_tensor(c)
    if c.data.ndim == 1:
        c = nx.reshape(c, (1, c.size))
    n_rows, width = c.shape
    target = T - k + 1
    if width % n_filters:
        raise nx.DimensionError(f"map width {width} is not a multiple of {n_filters} filters")
    L = width // n_filters
    if L < 1 or L > target:
        raise nx.DimensionError(f"feature map of {L} positions cannot be aligned to {target}")
    n_pad = target - L
    if n_pad == 0:
        return c
    return nx.concat([nx.Tensor(np.zeros((n_rows, n_pad * n_filters))), c], axis=1)


def concat_features(maps, n_filters=1):
    """Stack padded maps (scale-major, then filter) into a flat feature matrix.

    Each input is ``(B, L * n_filters)`` with the same ``L``. The result is
    ``(B, L * F)`` where column ``t * F + s * n_filters + j`` is filter ``j``
    of map ``s`` at position ``t``.
    """
    maps = [nx.as_tensor(m) for m in maps]
    if not maps:
        raise nx.DimensionError("no feature maps to concatenate")
    maps = [nx.reshape(m, (1, m.size)) if m.data.ndim == 1 else m for m in maps]
    widths = {m.shape for m in maps}
    if len(widths) != 1:
        raise nx.DimensionError(f"feature maps have inconsistent shapes {sorted(widths)}")
    n_rows, width = maps[0].shape
    if width % n_filters:
        raise nx.DimensionError(f"map width {width} is not a multiple of {n_filters} filters")
    L = width // n_filters
    S = len(maps)
    stacked = nx.concat(maps, axis=1)
    t, s, j = np.meshgrid(np.arange(L), np.arange(S), np.arange(n_filters), indexing="ij")
    cols = (s * width + t * n_filters + j).reshape(-1)
    idx = np.arange(n_rows)[:, None] * (S * width) + cols[None, :]
    return nx.gather(stacked, idx)


def feature_matrix(E, n_features):
    """View a flat ``(B, L * F)`` feature tensor as per-sample ``(B, F, L)`` arrays."""
    data = E.data if isinstance(E, nx.Tensor) else np.asarray(E)
    n_rows = data.shape[0]
    return data.reshape(n_rows, -1, n_features).transpose(0, 2, 1).copy()


def gru_step(e, h, gru):
    """One GRU update; ``gru`` maps ``W_r, U_r, W_z, U_z, W_h, U_h`` to tensors."""
    e, h = nx.as_tensor(e), nx.as_tensor(h)
    if e.data.ndim != 2 or h.data.ndim != 2 or e.shape[0] != h.shape[0]:
        raise nx.DimensionError(f"gru_step inputs {e.shape} and {h.shape}")
    r = nx.sigmoid(nx.add(nx.matmul(e, gru["W_r"]), nx.matmul(h, gru["U_r"])))
    z = nx.sigmoid(nx.add(nx.matmul(e, gru["W_z"]), nx.matmul(h, gru["U_z"])))
    cand = nx.tanh(nx.add(nx.matmul(e, gru["W_h"]), nx.matmul(nx.mul(r, h), gru["U_h"])))
    return nx.add(nx.mul(nx.sub(1.0, z), h), nx.mul(z, cand))


def encode(E, gru, n_features):
    """Run the GRU over all columns of the feature matrix; return the last state."""
    E = nx.as_tensor(E)
    if E.data.ndim != 2 or E.shape[1] == 0 or E.shape[1] % n_features:
        raise nx.DimensionError(f"feature matrix of shape {E.shape} with {n_features} features")
    n_rows = E.shape[0]
    q = gru["U_r"].shape[0]
    h = nx.Tensor(np.zeros((n_rows, q)))
    for t in range(E.shape[1] // n_features):
        h = gru_step(nx.take_cols(E, t * n_features, (t + 1) * n_features), h, gru)
    return h


def head(h, layers):
    """Fully-connected stack with ReLU between layers, then softmax.

    ``layers`` is a sequence of ``(weight, bias)`` tensor pairs.
    """
    h = nx.as_tensor(h)
    out = h
    for i, (w, b) in enumerate(layers):
        out = nx.add(nx.matmul(out, w), nx.repeat_rows(b, out.shape[0]))
        if i < len(layers) - 1:
            out = nx.relu(out)
    return nx.softmax(out)


def _split(tensors, config):
    gru = {key: tensors[f"gru.{key}"] for key in ("W_r", "U_r", "W_z", "U_z", "W_h", "U_h")}
    layers = [(tensors[f"fc{i}.w"], tensors[f"fc{i}.b"]) for i in range(len(config.fc_sizes))]
    return gru, layers


def _prepare(X, config):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != config.window:
        raise nx.DimensionError(f"expected windows of length {config.window}, got shape {X.shape}")
    if config.standardize:
        X = standardize_windows(X)
    return nx.Tensor(X)


def features(X, tensors, config):
    """Transform and feature layers: flat feature matrix for a batch of windows."""
    x = _prepare(X, config)
    n_rows, T = x.shape
    k, l = config.kernel_size, config.n_filters
    maps = []
    for d in config.scales:
        m = config.scale_length(d)
        # down-sampled rows keep positions d-1, 2d-1, ..., md-1
        idx = np.arange(n_rows)[:, None] * T + (np.arange(1, m + 1) * d - 1)[None, :]
        xd = nx.gather(x, idx)
        c = conv1d(xd, tensors[f"conv{d}.w"], tensors[f"conv{d}.b"], config.activation)
        maps.append(pad_left(c, T, k, l))
    return concat_features(maps, l)


def forward(X, params, tensors=None):
    """Class probabilities ``(B, C)`` for a batch of windows.

    Pass ``tensors`` (from ``params.tensors()``) when gradients are needed, so
    the caller keeps handles on the leaves.
    """
    config = params.config
    tensors = tensors if tensors is not None else params.tensors()
    E = features(X, tensors, config)
    gru, layers = _split(tensors, config)
    h = encode(E, gru, config.n_features)
    return head(h, layers)


def hidden_state(X, params):
    config = params.config
    tensors = params.tensors()
    gru, _ = _split(tensors, config)
    return encode(features(X, tensors, config), gru, config.n_features).numpy()


def cross_entropy(probs, y):
    """Mean negative log-likelihood of the true classes, ``log`` floored at 1e-12."""
    probs = nx.as_tensor(probs)
    y = np.asarray(y, dtype=np.intp).reshape(-1)
    if probs.data.ndim == 1:
        probs = nx.reshape(probs, (1, probs.size))
    n_rows, C = probs.shape
    if len(y) != n_rows:
        raise nx.DimensionError(f"{len(y)} labels for {n_rows} predictions")
    if len(y) and (y.min() < 0 or y.max() >= C):
        raise ValueError("class index out of range")
    picked = nx.gather(probs, np.arange(n_rows) * C + y)
    return nx.mul(nx.mean(nx.log(picked, floor=LOG_FLOOR)), -1.0)
