"""Mini-batch SGD with momentum, weight decay, and a step LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import Parameter
from .tensor import NonFiniteError


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    lr_drop_every: int = 20
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    clip_norm: float | None = None
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_drop_every < 1:
            raise ValueError(f"lr_drop_every must be >= 1, got {self.lr_drop_every}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: base_lr / drop_factor^(epoch // drop_every)."""
    return cfg.base_lr * cfg.lr_drop_factor ** (-(epoch // cfg.lr_drop_every))


def sgd_step(params: list[Parameter], lr: float, cfg: TrainConfig) -> None:
    """Heavy-ball update: v <- mu*v - lr*(g + wd*w); w <- w + v.

    Weight decay touches only parameters flagged ``decay`` (conv kernels).
    A non-finite gradient aborts before any parameter is mutated.
    """
    for p in params:
        if p.grad is None:
            raise ValueError(f"sgd_step: parameter {p.name or '?'} has no gradient")
        if not np.isfinite(p.grad).all():
            raise NonFiniteError(f"sgd_step: non-finite gradient in {p.name or '?'}")
    for p in params:
        g = p.grad
        if cfg.weight_decay and p.decay:
            g = g + cfg.weight_decay * p.tensor.data
        p.momentum *= cfg.momentum
        p.momentum -= lr * g
        p.tensor.data += p.momentum
        p.tensor.zero_grad()


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.tensor.grad *= factor
    return norm


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.tensor.zero_grad()
