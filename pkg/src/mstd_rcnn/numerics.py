"""Small dense tensor type with tape-based reverse-mode differentiation.

Every primitive records a backward closure on the active :class:`GradTape`
(if any). Outside a tape, operations simply compute values, which is what
inference uses.

Supported broadcasting is deliberately narrow: same-shape operands, or one
operand with exactly one element (a scalar). Row broadcasting, e.g. for
biases, goes through :func:`repeat_rows`, which is a gather.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "DimensionError",
    "NumericalError",
    "Tensor",
    "GradTape",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "elementwise",
    "sigmoid",
    "tanh",
    "relu",
    "identity",
    "gather",
    "take_cols",
    "repeat_rows",
    "reshape",
    "concat",
    "tensor_sum",
    "mean",
    "softmax",
    "log",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """A forward value or gradient became NaN/Inf."""


_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    if stack:
        return stack[-1]
    return None


class Tensor:
    """Immutable float64 array plus autodiff bookkeeping.

    ``data`` is stored C-contiguous (row-major). Parameters are created with
    ``requires_grad=True``; the tape only tracks values that depend on them.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def size(self):
        return int(self.data.size)

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all routes land on the primitives below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class GradTape:
    """Ordered record of primitive applications.

    Use as a context manager; operations executed inside the block are
    recorded, and :meth:`backward` replays them in reverse order::

        with GradTape() as tape:
            loss = f(w)
        (gw,) = tape.backward(loss, [w])
    """

    def __init__(self):
        self._nodes = []  # (output, inputs, backward_fn)

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out, inputs, backward_fn):
        self._nodes.append((out, inputs, backward_fn))

    def backward(self, loss, params):
        """Return gradients of scalar ``loss`` for each tensor in ``params``.

        Parameters that did not take part in computing ``loss`` get zeros.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ValueError("backward() needs a scalar loss tensor")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi
        result = []
        for p in params:
            g = grads.get(id(p))
            result.append(np.zeros_like(p.data) if g is None else g.reshape(p.shape))
        for g in result:
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient")
        return result


def _emit(value, inputs, backward_fn):
    out = Tensor(value)
    if any(t.requires_grad for t in inputs):
        tape = _active_tape()
        if tape is not None:
            out.requires_grad = True
            tape.record(out, inputs, backward_fn)
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    # overflow surfaces as NumericalError from the finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        value = A @ B
    return _emit(value, (a, b), backward)


def _broadcast_pair(a, b, opname):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{opname} of {a.shape} and {b.shape}")


def _unbroadcast(g, shape, size):
    if size == 1 and g.size != 1:
        return np.full(shape, g.sum())
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "add")
    with np.errstate(over="ignore", invalid="ignore"):
        value = a.data + b.data
    if a.size == 1 and b.size == 1:
        value = value.reshape(a.shape if a.data.ndim >= b.data.ndim else b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape, a.size), _unbroadcast(g, b.shape, b.size)

    return _emit(value, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "sub")
    with np.errstate(over="ignore", invalid="ignore"):
        value = a.data - b.data
    if a.size == 1 and b.size == 1:
        value = value.reshape(a.shape if a.data.ndim >= b.data.ndim else b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape, a.size), _unbroadcast(-g, b.shape, b.size)

    return _emit(value, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair(a, b, "mul")
    A, B = a.data, b.data
    with np.errstate(over="ignore", invalid="ignore"):
        value = A * B
    if a.size == 1 and b.size == 1:
        value = value.reshape(a.shape if A.ndim >= B.ndim else b.shape)

    def backward(g):
        return _unbroadcast(g * B, a.shape, a.size), _unbroadcast(g * A, b.shape, b.size)

    return _emit(value, (a, b), backward)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def identity(a):
    return as_tensor(a)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "identity": identity}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op, *operands):
    """Dispatch by name: ``elementwise("relu", x)``, ``elementwise("mul", a, b)``."""
    if op in _UNARY:
        if len(operands) != 1:
            raise TypeError(f"{op} takes one operand")
        return _UNARY[op](operands[0])
    if op in _BINARY:
        if len(operands) != 2:
            raise TypeError(f"{op} takes two operands")
        return _BINARY[op](*operands)
    raise ValueError(f"unknown elementwise op {op!r}")


def gather(a, index):
    """Pick elements of ``a`` by flat (row-major) position.

    ``index`` is an integer array; the output has ``index.shape``. Repeated
    positions accumulate in the backward pass.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.size):
        raise DimensionError(f"gather index out of range for size {a.size}")
    flat = a.data.reshape(-1)
    shape = a.shape

    def backward(g):
        ga = np.zeros(flat.shape)
        np.add.at(ga, index.reshape(-1), g.reshape(-1))
        return (ga.reshape(shape),)

    return _emit(flat[index], (a,), backward)


def take_cols(a, start, stop):
    """Columns ``start:stop`` of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"take_cols({start}, {stop}) on {a.shape}")
    rows, cols = a.shape
    idx = np.arange(rows)[:, None] * cols + np.arange(start, stop)[None, :]
    return gather(a, idx)


def repeat_rows(a, n):
    """Stack ``n`` copies of a single-row tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise DimensionError(f"repeat_rows needs a (1, p) tensor, got {a.shape}")
    idx = np.broadcast_to(np.arange(a.shape[1]), (n, a.shape[1]))
    return gather(a, idx)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _emit(value, tuple(tensors), backward)


def tensor_sum(a):
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(np.sum(g))),))


def mean(a):
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _emit(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(np.sum(g)) / n),))


def softmax(a):
    """Row-wise softmax of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"softmax expects 2-D input, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (a,), backward)


def log(a, floor=0.0):
    """Natural log of ``max(a, floor)``; clamped entries get zero gradient."""
    a = as_tensor(a)
    x = a.data
    clamped = x < floor
    safe = np.where(clamped, floor, x)
    if np.any(safe <= 0):
        raise NumericalError("log of a non-positive value")
    return _emit(np.log(safe), (a,), lambda g: (np.where(clamped, 0.0, g / safe),))
