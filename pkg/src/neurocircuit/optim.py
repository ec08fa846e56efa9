"""Adam optimizer with global gradient-norm clipping and L2 weight decay.

Weight decay is coupled: ``wd * theta`` is added to the raw gradient before
the moment updates (classic Adam-with-L2 semantics, not decoupled AdamW).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

Params = dict[str, np.ndarray]


@dataclass
class AdamConfig:
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0


def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_global_norm(grads: Params, max_norm: float) -> tuple[Params, float]:
    """Rescale all gradients so their joint norm is at most ``max_norm``.

    Returns the clipped gradients and the pre-clip norm.  Gradients already
    within bound are returned unchanged.
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params: Params, grads: Params, state: AdamState, cfg: AdamConfig) -> float:
    """One optimization step in place.  Returns the pre-clip gradient norm.

    Raises NumericalError (leaving params untouched) if any gradient is
    non-finite, so a training loop can abort the step cleanly.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{k}'")
    grads, norm = clip_global_norm(grads, cfg.clip_norm)
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for k, theta in params.items():
        g = grads[k]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * theta
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(theta)
            state.m[k] = m
            state.v[k] = np.zeros_like(theta)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    return norm
