"""Dense-tensor reverse-mode autodiff.

Define-by-run: every op executes eagerly on numpy arrays and, when gradients
are enabled and some input requires them, appends a (output, parents,
backward_fn) entry to a module-level tape.  ``backward(loss)`` walks the tape
in reverse, accumulates gradients keyed by tensor identity, assigns ``.grad``
(fresh arrays, never ``+=`` into stale ones), and clears the tape.

Training and evaluation run in float32; gradient-check tests build float64
tensors and every op simply preserves the input dtype.  A Tensor and the tape
are not thread-safe; parallelism happens across processes, each owning its
own tape.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import DimensionError, UsageError

DEFAULT_DTYPE = np.float32

_TAPE: list = []
_GRAD_ENABLED = True


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """View with gradients off; shares the data buffer."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routing through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def scale(self, s: float) -> "Tensor":
        return scale(self, s)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def backward(self):
        backward(self)


class no_grad:
    """Context manager: ops inside run without tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def tape_size() -> int:
    return len(_TAPE)


def clear_tape() -> None:
    _TAPE.clear()


def _record(out: Tensor, parents: tuple, fn) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE.append((out, parents, fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad for everything feeding `loss`; clears the tape."""
    if loss.data.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = any(out is loss for out, _, _ in _TAPE)
    if not produced:
        raise UsageError(
            "loss is not on the active tape (detached input or computed under no_grad)"
        )
    grads: dict = {id(loss): np.ones((), dtype=loss.data.dtype)}
    by_id: dict = {}
    for out, parents, fn in reversed(_TAPE):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if out.requires_grad:
            out.grad = g
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            by_id[id(p)] = p
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    for tid, g in grads.items():  # whatever remains was never produced: leaves
        t = by_id.get(tid)
        if t is not None:
            t.grad = g
    _TAPE.clear()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _record(Tensor(-a.data), (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(Tensor(a.data * np.asarray(s, dtype=a.dtype)), (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: stacked shapes {a.shape} @ {b.shape} incompatible")

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(Tensor(out_data), (a, b), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(Tensor(np.where(mask, a.data, 0)), (a,), lambda g: (g * mask,))


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_K * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def back(g):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _record(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _record(Tensor(y), (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(Tensor(y), (a,), lambda g: (g * (1.0 - y * y),))


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _record(out, (a,), back)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size if axis is None else a.data.shape[axis] if isinstance(axis, int) else int(
        np.prod([a.data.shape[i] for i in axis])
    )

    def back(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=False),)

    return _record(out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    return _record(Tensor(a.data.reshape(shape)), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(Tensor(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inverse),))


def slice_(a: Tensor, idx) -> Tensor:
    out = Tensor(a.data[idx])

    def back(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        return (buf,)

    return _record(out, (a,), back)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _record(out, tuple(tensors), back)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    return _record(Tensor(np.ascontiguousarray(data)), (a,), lambda g: (_unbroadcast(g, a.shape),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(s)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), back)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layernorm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    lead = tuple(range(x.ndim - 1))

    def back(g):
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbeta = g.sum(axis=lead) if lead else g.copy()
        return dx.astype(x.dtype, copy=False), dgamma, dbeta

    return _record(out, (x, gamma, beta), back)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices."""
    labels = np.asarray(labels).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise DimensionError(f"cross_entropy: {b} logit rows vs {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    s = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(s)
    z = e.sum(axis=1, keepdims=True)
    logp = s - np.log(z)
    rows = np.arange(b)
    out = Tensor(np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype))

    def back(g):
        p = e / z
        p[rows, labels] -= 1.0
        return ((g * p / b).astype(logits.dtype, copy=False),)

    return _record(out, (logits,), back)
