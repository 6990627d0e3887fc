"""Parameter update rules and learning-rate schedules."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def scheduled_lr(base_lr: float, schedule: Sequence[tuple[int, float]], epoch: int) -> float:
    """Learning rate at ``epoch`` (0-based).

    Multipliers are absolute: entry ``(k, m)`` sets the rate to ``base_lr * m``
    from epoch ``k`` on, until a later entry replaces it.
    """
    mult = 1.0
    for start, m in schedule:
        if epoch >= start:
            mult = m
    return base_lr * mult


def validate_schedule(schedule: Sequence[tuple[int, float]]) -> list[tuple[int, float]]:
    out = [(int(k), float(m)) for k, m in schedule]
    for (k0, _), (k1, _) in zip(out, out[1:]):
        if k1 <= k0:
            raise ValueError(f"schedule epochs must be strictly increasing, got {k0} then {k1}")
    return out


class SGD:
    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            p = self.params[name]
            p -= (lr * g).astype(p.dtype)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m, v, p = self.m[name], self.v[name], self.params[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype)


def make_optimizer(name: str, params: dict[str, np.ndarray]):
    if name == "adam":
        return Adam(params)
    if name == "sgd":
        return SGD(params)
    raise ValueError(f"unknown optimizer {name!r} (expected 'sgd' or 'adam')")
