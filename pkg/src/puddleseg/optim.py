"""Decoupled-weight-decay adaptive-moment optimizer with cosine decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradient
from .nn import Param


@dataclass
class ScheduleState:
    base_lr: float
    total_steps: int
    step: int = 0

    def lr(self) -> float:
        """Cosine decay from base_lr to 0 across total_steps."""
        if self.total_steps <= 0:
            return self.base_lr
        frac = min(self.step, self.total_steps) / self.total_steps
        return self.base_lr * 0.5 * (1.0 + float(np.cos(np.pi * frac)))


def adamw_update(value: np.ndarray, grad: np.ndarray, m: np.ndarray,
                 v: np.ndarray, t: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
    """One in-place parameter update; t is the 1-based update count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    value -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * value)


class AdamW:
    """Optimizer over a fixed parameter list; frozen tensors are excluded
    from the update set entirely."""

    def __init__(self, params: dict[str, Param], base_lr: float,
                 total_steps: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.schedule = ScheduleState(base_lr=base_lr, total_steps=total_steps)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.value)
                  for name, p in params.items() if not p.frozen}
        self.v = {name: np.zeros_like(p.value)
                  for name, p in params.items() if not p.frozen}

    def step(self) -> float:
        """Applies one update to every trainable parameter; returns the lr
        that was used."""
        lr = self.schedule.lr()
        self.t += 1
        for name, p in self.params.items():
            if p.frozen:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
            adamw_update(p.value, p.grad, self.m[name], self.v[name], self.t,
                         lr, self.beta1, self.beta2, self.eps, self.weight_decay)
        self.schedule.step += 1
        return lr

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name in self.m:
            key_m, key_v = f"opt.m.{name}", f"opt.v.{name}"
            if key_m in tensors:
                self.m[name][...] = tensors[key_m]
            if key_v in tensors:
                self.v[name][...] = tensors[key_v]
