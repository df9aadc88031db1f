"""Adam optimizer over named parameters.

Defaults follow the usual GAN-stable convention (beta1 = 0.5).  Moment
buffers live on the optimizer and persist across steps; update order is the
construction order of the parameter list, so runs are bit-deterministic.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        if not self.params:
            raise ValueError("Adam needs at least one parameter")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.tensor.grad is None:
                raise ValueError(f"Adam.step: parameter {p.name!r} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.tensor.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.tensor.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
