"""Adam and the two learning-rate schedules used for pretraining and finetuning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def adam_step(params, lr: float, t: int, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update in place; ``t`` is the 1-based step count.

    Parameters without a gradient are left untouched.
    """
    b1, b2 = betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * p.data
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * (g * g)
        mhat = p.m / c1
        vhat = p.v / c2
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0, clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if self.clip_norm is not None:
            clip_grad_norm(self.params, self.clip_norm)
        self.t += 1
        adam_step(self.params, self.lr if lr is None else lr, self.t, self.betas, self.eps, self.weight_decay)


def clip_grad_norm(params, max_norm: float) -> float:
    sq = sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)
    norm = sq**0.5
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def warmup_linear_decay(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.1) -> float:
    """Linear ramp 0 -> ``max_lr`` over the warmup fraction, then linear decay to 0."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return max_lr * step / warmup
    remaining = max(1, total_steps - warmup)
    return max_lr * max(0.0, (total_steps - step) / remaining)


@dataclass
class PlateauSchedule:
    """Performance-driven schedule for finetuning.

    After ``patience`` epochs without improvement the rate is multiplied by
    ``factor``; ``stop_patience`` consecutive non-improving epochs end training.
    Higher metric values are better.
    """

    lr: float = 5e-4
    patience: int = 5
    factor: float = 0.9
    stop_patience: int = 9
    best: float = field(default=-np.inf)
    bad_epochs: int = 0
    since_reduce: int = 0

    def step(self, metric: float) -> bool:
        """Record one epoch's validation metric; return True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
            self.since_reduce = 0
            return False
        self.bad_epochs += 1
        self.since_reduce += 1
        if self.since_reduce >= self.patience:
            self.lr *= self.factor
            self.since_reduce = 0
        return self.bad_epochs >= self.stop_patience


def lr_schedule(kind: str, state) -> float:
    """Dispatch helper: ``kind`` is 'warmup-linear-decay' (state: dict with
    step/total_steps/max_lr[/warmup_frac]) or 'plateau' (state: PlateauSchedule)."""
    if kind == "warmup-linear-decay":
        return warmup_linear_decay(state["step"], state["total_steps"], state["max_lr"], state.get("warmup_frac", 0.1))
    if kind == "plateau":
        return state.lr
    raise ValueError(f"unknown schedule {kind!r}")
