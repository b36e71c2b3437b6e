"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is a 64-bit float matrix. Ops record their inputs and a
vector-Jacobian-product closure; ``backward`` walks the recorded graph in
reverse topological order and accumulates gradients into ``Tensor.grad``.
Repeated ``backward`` calls accumulate (each call adds one full gradient).

No broadcasting except adding a 1xN bias row to an MxN matrix. A recorded
graph belongs to one thread; independent graphs may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class LabelOutOfRange(IndexError):
    pass


class NotScalar(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_vjp", "_needs")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self._grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._needs = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on shape {self.shape}")
        return float(self.data[0, 0])

    def relu(self) -> "Tensor":
        return relu(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out._grad = None
    out._needs = any(p._needs for p in parents)
    if out._needs:
        out._parents = parents
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a._needs else None,
                ad.T @ g if b._needs else None)

    return _make(ad @ bd, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1xN bias row against an MxN ``a``."""
    if a.shape == b.shape:
        def vjp(g):
            return (g, g)
    elif b.shape == (1, a.shape[1]):
        def vjp(g):
            return (g, g.sum(axis=0, keepdims=True))
    else:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _make(a.data + b.data, (a, b), vjp)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0.0  # subgradient at 0 is 0

    def vjp(g):
        return (g * mask,)

    return _make(np.where(mask, t.data, 0.0), (t,), vjp)


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (c * g,)

    return _make(c * t.data, (t,), vjp)


def row_sum(t: Tensor) -> Tensor:
    """Column-wise sum over rows -> 1xN. An empty (0xN) input sums to zeros."""
    rows = t.shape[0]

    def vjp(g):
        return (np.broadcast_to(g, (rows, g.shape[1])).copy(),)

    return _make(t.data.sum(axis=0, keepdims=True), (t,), vjp)


def sum_all(t: Tensor) -> Tensor:
    shape = t.shape

    def vjp(g):
        return (np.full(shape, g[0, 0]),)

    return _make(np.array([[t.data.sum()]]), (t,), vjp)


def select_rows(t: Tensor, indices) -> Tensor:
    """Gather rows by index; indices may repeat, and may be empty."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[0]):
        raise IndexOutOfRange(f"row index out of range for {t.shape[0]} rows")
    shape = t.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(t.data[idx], (t,), vjp)


def scatter_rows(t: Tensor, indices, num_rows: int) -> Tensor:
    """Place row r of ``t`` at ``indices[r]`` of a zeroed (num_rows x N) matrix.

    Indices must be unique; summation of duplicate targets is done by
    issuing several scatters.
    """
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size != t.shape[0]:
        raise ShapeMismatch(f"{idx.size} indices for {t.shape[0]} rows")
    if idx.size:
        if idx.min() < 0 or idx.max() >= num_rows:
            raise IndexOutOfRange(f"row index out of range for {num_rows} rows")
        if np.unique(idx).size != idx.size:
            raise IndexOutOfRange("scatter_rows indices must be unique")

    def vjp(g):
        return (g[idx],)

    out = np.zeros((num_rows, t.shape[1]))
    out[idx] = t.data
    return _make(out, (t,), vjp)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat_rows of nothing")
    cols = tensors[0].shape[1]
    if any(t.shape[1] != cols for t in tensors):
        raise ShapeMismatch("concat_rows column mismatch")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.vsplit(g, splits))

    return _make(np.vstack([t.data for t in tensors]), tuple(tensors), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Summed cross-entropy of row-wise softmax against integer labels.

    ``logits`` is MxK (K >= 2); ``labels`` is one int (M must be 1) or a
    length-M sequence. Stabilized by max-subtraction. The single-row case is
    the plain -log softmax(logits)[label].
    """
    if logits.shape[1] < 2:
        raise ShapeMismatch(f"need >=2 classes, got {logits.shape[1]}")
    lab = np.asarray(labels, dtype=np.intp).reshape(-1)
    if lab.size != logits.shape[0]:
        raise ShapeMismatch(f"{lab.size} labels for {logits.shape[0]} rows")
    if lab.size and (lab.min() < 0 or lab.max() >= logits.shape[1]):
        raise LabelOutOfRange(f"label outside [0, {logits.shape[1]})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(lab.size)

    def vjp(g):
        d = np.exp(logp)  # softmax
        d[rows, lab] -= 1.0
        return (g[0, 0] * d,)

    return _make(np.array([[-logp[rows, lab].sum()]]), (logits,), vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def vjp(g):
        d = (2.0 / n) * diff * g[0, 0]
        return (d if pred._needs else None, -d if target._needs else None)

    return _make(np.array([[(diff * diff).mean()]]), (pred, target), vjp)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p._needs and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` of every reachable tensor."""
    if loss.shape != (1, 1):
        raise NotScalar(f"backward needs a 1x1 loss, got {loss.shape}")
    order = _topo_order(loss)
    local: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    by_id = {id(t): t for t in order}
    for t in reversed(order):
        g = local.get(id(t))
        if g is None or t._vjp is None:
            continue
        for p, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not p._needs:
                continue
            acc = local.get(id(p))
            local[id(p)] = pg if acc is None else acc + pg
    for tid, g in local.items():
        t = by_id[tid]
        t._grad = g if t._grad is None else t._grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()
