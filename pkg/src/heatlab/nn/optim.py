"""Adam with bias correction and per-parameter step counts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class TrainingError(RuntimeError):
    """A non-finite gradient or loss reached the optimiser."""


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        # validate everything before touching any parameter
        for p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in {p.name or 'parameter'}")
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.t[i] += 1
            t = self.t[i]
            m, v = self.m[i], self.v[i]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            step = self.lr / (1 - self.b1 ** t)
            denom = np.sqrt(v / (1 - self.b2 ** t))
            denom += self.eps
            p.data = p.data - step * (m / denom)

    def state(self) -> dict:
        return {"m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v], "t": list(self.t)}
