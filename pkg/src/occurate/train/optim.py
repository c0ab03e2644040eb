"""Adaptive-moment optimizers over Parameters."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam; with ``decoupled=True`` weight decay is applied directly to the weights (AdamW).

    Decay only touches parameters with two or more dimensions (conv/linear
    weights and embedding tables), never norms or biases.
    """

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decoupled=False):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                continue
            decay = self.weight_decay and p.value.ndim >= 2
            if decay and not self.decoupled:
                g = g + self.weight_decay * p.value
            m, v = self.m[p.name], self.v[p.name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if decay and self.decoupled:
                p.value *= 1.0 - self.lr * self.weight_decay
            p.value -= (self.lr * update).astype(p.value.dtype)


def AdamW(params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2) -> Adam:
    return Adam(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay, decoupled=True)
