"""ADAM with bias correction, restricted to a trainable subset of tensors."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    patience: int = 25
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.patience < 1 or self.batch_size < 1:
            raise ValueError("patience and batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(weights, grads, state, t, cfg, mask=None):
    """Update ``weights`` in place for names in ``mask`` (all names if None).

    Tensors outside the mask, and their moment estimates, are left untouched.
    """
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    names = weights.keys() if mask is None else mask
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name in names:
        g = grads.get(name)
        if g is None:
            continue
        w = weights[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {w.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        w -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(w.dtype)
    state.t = t
    return weights, state
