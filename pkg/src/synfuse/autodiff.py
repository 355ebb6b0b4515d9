"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every primitive computes its value eagerly with numpy and, when a ``Tape`` is
active, appends a node holding the backward rule.  ``Tape.backward`` replays
the nodes in reverse recording order, which is a valid reverse topological
order because a node can only consume tensors created before it.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "ShapeMismatch",
    "NonFiniteGradient",
    "Tensor",
    "Parameter",
    "Tape",
    "no_tape",
    "matmul",
    "add",
    "add_bias",
    "sub",
    "mul",
    "scale",
    "relu",
    "gelu",
    "as_tensor",
    "transpose",
    "concat_cols",
    "concat_rows",
    "mean_rows",
    "max_rows",
    "gather_rows",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "cross_entropy",
    "Adam",
]

LOG_FLOOR = math.log(1e-12)
LN_EPS = 1e-5


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


_active: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Trainable tensor; ``grad`` persists across tapes until ``zero_grad``."""

    __slots__ = ("name",)

    def __init__(self, value, name):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of the primitive ops applied while it is active."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def backward(self, loss, seed=1.0):
        """Populate ``.grad`` of every tensor reachable from ``loss``.

        Intermediate gradients are released as soon as their node has been
        processed, while Parameter gradients accumulate.
        """
        if loss.shape != (1, 1) and np.ndim(seed) == 0:
            raise ShapeMismatch("backward needs a scalar loss or an explicit seed")
        loss._accumulate(np.broadcast_to(np.asarray(seed, dtype=np.float64), loss.shape))
        for out, inputs, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for t, gt in zip(inputs, grads):
                if gt is not None and t.requires_grad:
                    t._accumulate(gt)
            if not isinstance(out, Parameter):
                out.grad = None
        self.nodes.clear()


@contextmanager
def no_tape():
    """Suspend recording (inference)."""
    saved = list(_active)
    _active.clear()
    try:
        yield
    finally:
        _active.extend(saved)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_wrap = as_tensor


def _emit(value, inputs, backward_fn):
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs and _active:
        _active[-1].record(out, inputs, backward_fn)
    return out


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _emit(av @ bv, (a, b), back)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(x, b):
    """x (n×k) plus a 1×k row broadcast over rows."""
    x, b = _wrap(x), _wrap(b)
    if b.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"bias {b.shape} for input {x.shape}")
    return _emit(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} - {b.shape}")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x, c):
    x = _wrap(x)
    c = float(c)
    return _emit(x.value * c, (x,), lambda g: (g * c,))


def relu(x):
    x = _wrap(x)
    mask = x.value > 0
    return _emit(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def gelu(x):
    """tanh approximation."""
    x = _wrap(x)
    v = x.value
    c = math.sqrt(2.0 / math.pi)
    inner = c * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)
    d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * v * v)
    return _emit(out, (x,), lambda g: (g * d,))


def transpose(x):
    x = _wrap(x)
    return _emit(x.value.T.copy(), (x,), lambda g: (g.T,))


def concat_cols(*xs):
    xs = [_wrap(x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols row counts {sorted(rows)}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    value = np.concatenate([x.value for x in xs], axis=1)
    return _emit(value, tuple(xs), lambda g: tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])))


def concat_rows(*xs):
    xs = [_wrap(x) for x in xs]
    cols = {x.shape[1] for x in xs}
    if len(cols) != 1:
        raise ShapeMismatch(f"concat_rows column counts {sorted(cols)}")
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])
    value = np.concatenate([x.value for x in xs], axis=0)
    return _emit(value, tuple(xs), lambda g: tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])))


def mean_rows(x):
    """Column means as a 1×k row."""
    x = _wrap(x)
    n = x.shape[0]
    return _emit(x.value.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / n, n, axis=0),))


def max_rows(x):
    """Column maxima as a 1×k row; gradient goes to the first maximal row."""
    x = _wrap(x)
    arg = x.value.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def back(g):
        out = np.zeros_like(x.value)
        out[arg, cols] = g[0]
        return (out,)

    return _emit(x.value[arg, cols].reshape(1, -1), (x,), back)


def gather_rows(table, idx):
    """Rows ``table[idx]``; repeated indices accumulate gradient."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"row index out of range for {table.shape}")

    def back(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(table.value[idx], (table,), back)


def softmax_rows(x):
    x = _wrap(x)
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit(p, (x,), back)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Per-row normalization over the feature axis, then ``gain * x̂ + bias``."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    k = x.shape[1]
    if gain.shape != (1, k) or bias.shape != (1, k):
        raise ShapeMismatch(f"layer_norm affine {gain.shape}/{bias.shape} for {x.shape}")
    mu = x.value.mean(axis=1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gain.value

    def back(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _emit(xhat * gv + bias.value, (x, gain, bias), back)


def dropout(x, rate, training, rng):
    """Inverted dropout; identity outside training or at rate 0."""
    x = _wrap(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.value * keep, (x,), lambda g: (g * keep,))


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of the true class; log floored at ln(1e-12)."""
    probs = _wrap(probs)
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n = probs.shape[0]
    if labels.shape[0] != n:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {n} rows")
    rows = np.arange(n)
    picked = probs.value[rows, labels]
    with np.errstate(divide="ignore"):
        logp = np.log(picked)
    clamped = logp < LOG_FLOOR
    logp = np.where(clamped, LOG_FLOOR, logp)

    def back(g):
        out = np.zeros_like(probs.value)
        safe = np.where(clamped, 1.0, picked)
        out[rows, labels] = np.where(clamped, 0.0, -g[0, 0] / (n * safe))
        return (out,)

    return _emit(np.array([[-logp.mean()]]), (probs,), back)


class Adam:
    """Adam with bias correction; ``step`` raises on a non-finite gradient."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def check_finite(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(p.name)

    def step(self):
        self.check_finite()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}
