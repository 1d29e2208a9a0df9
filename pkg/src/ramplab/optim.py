"""Adam with bias correction, plus global gradient-norm clipping."""
from __future__ import annotations

import math

import numpy as np

from ramplab.network import ParamStore


def clip_global_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = 0.0
    for _, tensor in store.items():
        if tensor.grad is not None:
            total += float((tensor.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for _, tensor in store.items():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm


class Adam:
    """Standard Adam over a parameter store.

    ``step`` consumes the gradients (slots are cleared afterwards); parameters
    with no gradient are left untouched and their moments do not advance.
    """

    def __init__(
        self,
        store: ParamStore,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data, dtype=np.float64) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data, dtype=np.float64) for name, t in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.store.items():
            g = tensor.grad
            if g is None:
                continue
            g = g.astype(np.float64)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            tensor.data[...] = tensor.data - update.astype(tensor.data.dtype)
            tensor.grad = None
