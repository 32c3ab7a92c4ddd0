"""AdamW with decoupled weight decay, over name->Tensor parameter maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWConfig:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, hyper=None):
    """One AdamW update in place.

    Weight decay is decoupled: the decay term never enters the moment
    estimates. Raises on NaN gradients so divergence surfaces instead of
    propagating silently.
    """
    if hyper is None:
        hyper = AdamWConfig()
    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adamw_step: non-finite gradient for '{name}'")
        if g.shape != p.data.shape:
            raise ValueError(
                f"adamw_step: gradient shape {g.shape} != param shape {p.data.shape} for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data = p.data * (1.0 - hyper.lr * hyper.weight_decay) \
            - hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)
    return params, state
