"""Minimal reverse-mode automatic differentiation over 2-D numpy arrays.

Every operation builds a node holding its inputs and a vector-Jacobian
closure; :func:`backward` walks the graph once in reverse topological order
and accumulates gradients into ``.grad`` slots.  Only what the encoders and
the Q head need is implemented, and everything stays dense 2-D, which keeps
each rule a few lines of numpy.

Gradient recording can be suspended with ``with no_grad(): ...`` for target
computations and finite-difference probes.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that turns off graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tensor:
    """A 2-D array plus an optional place in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        # leaves keep their flag even under no_grad; recording is gated per-op
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={self.requires_grad})"


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _node(a.data @ b.data, "matmul", (a, b), vjp)


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materialising a transpose node."""

    def vjp(g):
        return (
            g @ b.data if a.requires_grad else None,
            g.T @ a.data if b.requires_grad else None,
        )

    return _node(a.data @ b.data.T, "matmul_nt", (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        return g, g

    return _node(a.data + b.data, "add", (a, b), vjp)


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Row-broadcast add of a (1, k) bias."""
    if bias.data.shape != (1, a.data.shape[1]):
        raise ValueError(f"bias shape {bias.data.shape} does not fit {a.data.shape}")

    def vjp(g):
        return g, g.sum(axis=0, keepdims=True)

    return _node(a.data + bias.data, "add_bias", (a, bias), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return g, -g

    return _node(a.data - b.data, "sub", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        return g * b.data, g * a.data

    return _node(a.data * b.data, "mul", (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g * c,)

    return _node(a.data * c, "scale", (a,), vjp)


def add_const(a: Tensor, arr: np.ndarray) -> Tensor:
    """Add a constant array (e.g. an additive attention mask)."""

    def vjp(g):
        return (g,)

    return _node(a.data + arr, "add_const", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def vjp(g):
        return (g * keep,)

    return _node(np.where(keep, a.data, 0.0), "relu", (a,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _node(y, "softmax", (a,), vjp)


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardisation followed by an affine map with (1, k) params."""
    mu = a.data.mean(axis=1, keepdims=True)
    centred = a.data - mu
    std = np.sqrt((centred * centred).mean(axis=1, keepdims=True) + eps)
    y = centred / std

    def vjp(g):
        dy = g * gain.data
        dx = (dy - dy.mean(axis=1, keepdims=True) - y * (dy * y).mean(axis=1, keepdims=True)) / std
        return dx, (g * y).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _node(y * gain.data + bias.data, "layer_norm", (a, gain, bias), vjp)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    widths = [t.data.shape[1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.hsplit(g, splits))

    return _node(np.hstack([t.data for t in tensors]), "concat", tuple(tensors), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return (da,)

    return _node(a.data[:, start:stop].copy(), "slice", (a,), vjp)


def select_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, indices, g)
        return (da,)

    return _node(a.data[indices].copy(), "select_rows", (a,), vjp)


def gather(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick scalar entries (rows[i], cols[i]) into a (k, 1) column."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, (rows, cols), g[:, 0])
        return (da,)

    return _node(a.data[rows, cols][:, None].copy(), "gather", (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(a.data, g[0, 0]),)

    return _node(a.data.sum(dtype=a.data.dtype).reshape(1, 1), "sum", (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    ``loss`` must be a single-element tensor.  Gradients add onto whatever is
    already in ``.grad``; clear parameter grads between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (built under no_grad?)")
    order = graph_nodes(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
