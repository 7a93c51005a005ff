"""Adam with bias correction and the inverse-square-root warmup schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


def warmup_lr(step: int, base_lr: float, warmup: int) -> float:
    """``base_lr * min(step**-0.5, step * warmup**-1.5)``; peaks at ``step == warmup``."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    return base_lr * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimizerState:
    base_lr: float
    warmup_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-9
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        """Learning rate the next update will use."""
        return warmup_lr(self.step_count + 1, self.base_lr, self.warmup_steps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float | None = None) -> float:
    """Apply one Adam update in place and return the learning rate used.

    Parameters absent from ``grads`` (or with a ``None`` grad) still advance
    their moments with a zero gradient, so every parameter sees the same
    bias-correction step.
    """
    state.step_count += 1
    t = state.step_count
    if lr is None:
        lr = warmup_lr(t, state.base_lr, state.warmup_steps)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr
