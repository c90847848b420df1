"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, PreconditionError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(beta1, beta2, eps, 0,
                   [np.zeros(p.shape) for p in params],
                   [np.zeros(p.shape) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> AdamState:
    """Update ``params`` (Tensors) in place from ``grads`` (arrays) and return ``state``."""
    if lr <= 0:
        raise PreconditionError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: params, grads and state lengths differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: shape mismatch for {p.name}: {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
