"""Adam with the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np


def lr_at(iteration: int, lr0: float = 1e-3, decay: float = 0.9, every: int = 200) -> float:
    """``lr0 * decay ** floor(iteration / every)``."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return lr0 * decay ** (iteration // every)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({n: np.zeros_like(p) for n, p in params.items()},
                   {n: np.zeros_like(p) for n, p in params.items()}, **kw)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update of ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"moment shape {m.shape} != parameter shape {p.shape} for {name}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
