"""AdamW with linear warmup and cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DECAYED = ("patch.w", "attn.wqkv", "attn.wo", "mlp.w1", "mlp.w2", "tok_head.proj", "reg_head.w1", "reg_head.w2")


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    total_steps: int
    warmup_ratio: float = 0.03

    @property
    def warmup_steps(self) -> int:
        return max(1, math.ceil(self.warmup_ratio * self.total_steps))

    def lr(self, step: int) -> float:
        """Learning rate for 0-based ``step``; zero at step 0 and at ``total_steps``."""
        w = self.warmup_steps
        if step < w:
            return self.base_lr * step / w
        if step >= self.total_steps:
            return 0.0
        frac = (step - w) / max(1, self.total_steps - w)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def decays(name: str) -> bool:
    return name.endswith(DECAYED)


def opt_step(
    params: dict,
    grads: dict,
    state: OptState,
    step: int,
    schedule: Schedule,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> dict:
    """One AdamW update in place; returns ``params``."""
    lr = schedule.lr(step)
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay and decays(k):
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
