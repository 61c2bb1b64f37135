"""Dense f64 tensors with a reverse-mode gradient tape.

Every op builds a new :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them. ``backward`` walks the graph in
reverse topological order and accumulates gradients additively.

Broadcasting is deliberately limited to bias-style operands: a 1-D row
vector applied to every row of a 2-D tensor, or a 0-d scalar.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((), float(x)) if np.isscalar(x) else x)


def _make(data: np.ndarray, parents: Sequence[Tensor], bw, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (), _backward=bw if req else None, op=op)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior gradients are not needed once propagated
            if node._parents:
                node.grad = None


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _row_broadcast(a: Tensor, b: Tensor, op: str):
    """How ``b`` is broadcast onto ``a``: None (same shape), "row" or "scalar"."""
    if a.shape == b.shape:
        return None
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row"
    if b.data.ndim == 0:
        return "scalar"
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, kind) -> np.ndarray:
    if kind == "row":
        return g.sum(axis=0)
    if kind == "scalar":
        return np.asarray(g.sum())
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    kind = _row_broadcast(a, b, "add")

    def bw(g):
        a._accum(g)
        b._accum(_reduce_to(g, kind))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def bw(g):
        a._accum(g)
        b._accum(-g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may be a row vector or a scalar."""
    kind = _row_broadcast(a, b, "mul")

    def bw(g):
        a._accum(g * b.data)
        b._accum(_reduce_to(g * a.data, kind))

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: a._accum(g * c), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a._accum(np.multiply.outer(g, b.data))
            else:
                a._accum(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accum(np.multiply.outer(a.data, g))
            elif b.data.ndim == 1:
                b._accum(a.data.T @ g)
            else:
                b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)), "reshape")


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Stack 0-d/1-element tensors into a 1-D tensor."""
    return concat([reshape(s, (1,)) for s in scalars], axis=0)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-D, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: a._accum(g.T), "transpose")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p._accum(g[tuple(idx)])

    return _make(out, parts, bw, "concat")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accum(full)

    return _make(a.data[:, start:stop].copy(), (a,), bw, "slice_cols")


def gather_rows(a: Tensor, rows) -> Tensor:
    """Select rows of a 2-D tensor (or entries of a 1-D one) by index."""
    rows = np.asarray(rows, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows, g)
        a._accum(full)

    return _make(a.data[rows].copy(), (a,), bw, "gather_rows")


def pick(a: Tensor, cols) -> Tensor:
    """Return ``a[i, cols[i]]`` for each row i as a 1-D tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    if a.data.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeError(f"pick: shape mismatch {a.shape} vs {cols.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros_like(a.data)
        full[rows, cols] = g
        a._accum(full)

    return _make(a.data[rows, cols].copy(), (a,), bw, "pick")


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax. ``mask`` marks allowed entries; the rest get exactly 0."""
    z = a.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accum(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (a,), bw, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        a._accum(g - p * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), bw, "log_softmax")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out), "exp")


def square(a: Tensor) -> Tensor:
    return _make(a.data**2, (a,), lambda g: a._accum(2.0 * g * a.data), "square")


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(a.data * on, (a,), lambda g: a._accum(g * on), "relu")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then apply gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: shape mismatch {x.shape} vs {gain.shape}/{bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = x.shape[1]

    def bw(g):
        gain._accum((g * xhat).sum(axis=0))
        bias._accum(g.sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            x._accum(inv / d * (d * gx - gx.sum(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True)))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), bw, "layer_norm")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so inference is the identity."""
    if not train or p <= 0.0:
        return a
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: a._accum(g * keep), "dropout")


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u| |v|) for two 1-D tensors."""
    _check_same(u, v, "cosine_similarity")
    if u.data.ndim != 1:
        raise ShapeError(f"cosine_similarity: need 1-D vectors, got {u.shape}")
    nu = np.linalg.norm(u.data)
    nv = np.linalg.norm(v.data)
    if nu == 0.0 or nv == 0.0:
        raise FloatingPointError("cosine_similarity of a zero vector")
    dot = float(u.data @ v.data)
    s = dot / (nu * nv)

    def bw(g):
        u._accum(g * (v.data / (nu * nv) - s * u.data / nu**2))
        v._accum(g * (u.data / (nu * nv) - s * v.data / nv**2))

    return _make(np.asarray(s), (u, v), bw, "cosine_similarity")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
