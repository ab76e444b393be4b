"""Masked losses, Adam and the warmup/exponential-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


class AllMissing(ValueError):
    pass


def masked_loss(preds: Tensor, targets: np.ndarray, mask: np.ndarray, classification: bool) -> Tensor:
    """Mean squared error, or mean BCE on logits, over the entries where ``mask`` is set."""
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if preds.shape != targets.shape or mask.shape != targets.shape:
        raise T.ShapeMismatch(f"loss: preds {preds.shape}, targets {targets.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise AllMissing("every target in the batch is missing")
    weights = mask.astype(np.float64)
    safe = np.where(mask, targets, 0.0)
    if classification:
        per_entry = T.bce_with_logits(preds, safe)
    else:
        per_entry = T.square(T.sub(preds, Tensor(safe)))
    return T.scale(T.sum_all(T.mul(per_entry, Tensor(weights))), 1.0 / count)


@dataclass(frozen=True)
class NoamSchedule:
    """Linear warmup from ``init_lr`` to ``max_lr``, then exponential decay to ``final_lr``.

    Steps are optimizer updates; the decay reaches ``final_lr`` on the last step.
    """

    init_lr: float
    max_lr: float
    final_lr: float
    warmup_steps: int
    total_steps: int

    def __call__(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.init_lr + step * (self.max_lr - self.init_lr) / self.warmup_steps
        decay_steps = max(self.total_steps - 1 - self.warmup_steps, 1)
        gamma = (self.final_lr / self.max_lr) ** (1.0 / decay_steps)
        return self.max_lr * gamma ** min(step - self.warmup_steps, decay_steps)


def noam_schedule(init_lr, max_lr, final_lr, warmup_epochs, epochs, steps_per_epoch) -> NoamSchedule:
    warmup = int(round(warmup_epochs * steps_per_epoch))
    return NoamSchedule(init_lr, max_lr, final_lr, warmup, epochs * steps_per_epoch)


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)
