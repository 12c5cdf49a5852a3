"""Bias-corrected Adam.

Defaults follow the training recipe used throughout the package:
lr 1e-4, beta1 0.9, beta2 0.99. The caller controls gradient lifetime:
``zero_grad`` must be invoked explicitly before each backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter-set optimizer state (first/second moments, step count)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """Apply one in-place Adam update to ``params`` given ``grads``.

    Arrays are updated in place; the state's moment buffers are created on
    first use and must keep matching the parameter lengths afterwards.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params vs {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step: state buffers do not match parameter count")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr / bias1) * m / (np.sqrt(v / bias2) + state.eps)
    return params, state


class Adam:
    """Convenience wrapper stepping a list of graph tensors."""

    def __init__(self, params: list[Tensor], lr=1e-4, beta1=0.9, beta2=0.99, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        arrays = [p.data for p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step(arrays, grads, self.state)
