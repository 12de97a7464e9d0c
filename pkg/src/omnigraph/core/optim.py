"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = True
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Update ``params`` (Tensors) in place from ``grads`` (dict keyed by Tensor).

    Parameters absent from ``grads`` are treated as having zero gradient.
    """
    for p in params:
        g = grads.get(p)
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {p.name or 'parameter'}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if state.weight_decay and not state.decoupled:
            g = g + state.weight_decay * p.data
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay and state.decoupled:
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * update
    return params


class Adam:
    """Binds a parameter list to its :class:`AdamState`."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, decoupled=True):
        self.params = list(params)
        self.state = AdamState(lr=lr, weight_decay=weight_decay, decoupled=decoupled)

    def step(self, grads):
        adam_step(self.params, grads, self.state)
