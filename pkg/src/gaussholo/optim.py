"""Adan optimizer with per-group learning rates, plus a cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

# learning rates per parameter group; positions are cosine-annealed to POSITION_LR_MIN
DEFAULT_LRS = {
    "pre_position": 1e-2,
    "pre_scale": 5e-3,
    "rotation": 1e-3,
    "amplitude": 2.5e-3,
    "phase": 2.5e-3,
    "pre_opacity": 2.5e-2,
}
POSITION_LR_MIN = 1e-3


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    if total_steps <= 0:
        return lr_min
    step = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class _Moments:
    m: np.ndarray
    diff: np.ndarray
    v: np.ndarray
    prev_grad: np.ndarray


@dataclass
class AdanState:
    step: int = 0
    moments: dict[str, _Moments] = field(default_factory=dict)


class NonFiniteGradientError(FloatingPointError):
    pass


class Adan:
    """Adaptive Nesterov momentum optimiser without weight decay or restarts.

    ``lrs`` maps a group name to a constant rate or to a callable
    ``step -> rate`` (step counted from 0 for the first update).
    """

    def __init__(self, lrs: Mapping[str, float | Callable[[int], float]],
                 betas: tuple[float, float, float] = (0.98, 0.92, 0.99), eps: float = 1e-8):
        self.lrs = dict(lrs)
        self.betas = betas
        self.eps = eps
        self.state = AdanState()

    def lr(self, name: str) -> float:
        lr = self.lrs[name]
        return float(lr(self.state.step)) if callable(lr) else float(lr)

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Update ``params`` in place and return it."""
        for name, g in grads.items():
            if name not in params:
                raise KeyError(f"gradient for unknown parameter group {name!r}")
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter group {name!r}")
        b1, b2, b3 = self.betas
        k = self.state.step + 1
        bc1 = 1.0 - b1**k
        bc2 = 1.0 - b2**k
        bc3 = 1.0 - b3**k
        for name, g in grads.items():
            lr = self.lr(name)
            mom = self.state.moments.get(name)
            if mom is None:
                z = np.zeros_like(g)
                mom = _Moments(z.copy(), z.copy(), z.copy(), g.copy())
                self.state.moments[name] = mom
            d = g - mom.prev_grad
            u = g + b2 * d
            mom.m *= b1
            mom.m += (1.0 - b1) * g
            mom.diff *= b2
            mom.diff += (1.0 - b2) * d
            mom.v *= b3
            mom.v += (1.0 - b3) * u * u
            denom = np.sqrt(mom.v) / math.sqrt(bc3) + self.eps
            p = params[name]
            p -= (lr / bc1) * mom.m / denom
            p -= (lr * b2 / bc2) * mom.diff / denom
            mom.prev_grad[...] = g
        self.state.step = k
        return params
