"""Adam with bias correction and a linear learning-rate decay schedule."""

from __future__ import annotations

import numpy as np

from gatedlora.tensor import Tensor


class Adam:
    def __init__(
        self,
        params,
        lr: float = 5e-4,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class LinearDecay:
    """lr ramps linearly up over the warmup span, then linearly to zero.

    Call step() after each optimizer step; the factor for step k uses the
    number of completed steps, so the first step runs at full lr when
    warmup_ratio is 0.
    """

    def __init__(self, optimizer: Adam, total_steps: int, warmup_ratio: float = 0.0):
        if total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        self.opt = optimizer
        self.base_lr = optimizer.lr
        self.total = total_steps
        self.warmup = int(round(warmup_ratio * total_steps))
        self.steps_done = 0
        self._apply()

    def _factor(self) -> float:
        k = self.steps_done
        if self.warmup > 0 and k < self.warmup:
            return k / self.warmup
        denom = max(self.total - self.warmup, 1)
        return max(0.0, (self.total - k) / denom)

    def _apply(self) -> None:
        self.opt.lr = self.base_lr * self._factor()

    def step(self) -> None:
        self.steps_done += 1
        self._apply()
