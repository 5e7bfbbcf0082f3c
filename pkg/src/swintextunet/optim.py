"""AdamW with decoupled weight decay, and the warmup+cosine learning schedule."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor
from .config import ScheduleConfig
from .errors import NumericsError, UsageError


class AdamW:
    """Bias-corrected Adam moments; weight decay applied directly to weights."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.named_params = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for _, p in self.named_params]
        self._v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for (name, p), m, v in zip(self.named_params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / c1
            vhat = v / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None


def lr_at(epoch: int, sched: ScheduleConfig) -> float:
    """Linear warmup from 0 to base, then cosine from base down to min lr."""
    if epoch < 0 or epoch >= sched.epochs:
        raise UsageError(f"epoch {epoch} outside [0, {sched.epochs})")
    warmup = int(round(sched.warmup_fraction * sched.epochs))
    if warmup > 0 and epoch < warmup:
        return sched.base_lr * epoch / warmup
    span = sched.epochs - 1 - warmup
    if span <= 0:
        return sched.base_lr
    t = (epoch - warmup) / span
    return sched.min_lr + (sched.base_lr - sched.min_lr) * 0.5 * (1.0 + math.cos(math.pi * t))
