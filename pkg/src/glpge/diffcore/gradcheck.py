"""Finite-difference verification of analytic gradients.

``grad_check`` takes a graph builder: a zero-argument callable returning
``(loss, params)`` where the parameter tensors wrap arrays that persist
across calls, so the builder can be re-evaluated after in-place
perturbations. Graphs should be built in float64 for meaningful tolerances.

Probes that land within ``eps`` of a kink of any piecewise op in the graph
(relu/clamp edges, |x| at 0, pooling ties) are excluded: the two one-sided
function values straddle different linear pieces there and the central
difference is not a derivative estimate.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from .tensor import Tensor, _KinkTracker


def _eval(build):
    """One tracked forward pass: returns (loss value, min kink margin)."""
    _KinkTracker.reset()
    loss, _ = build()
    return float(loss.data.reshape(())), _KinkTracker.min_margin


def _probe_indices(arr: np.ndarray, limit, rng):
    if limit is None or arr.size <= limit:
        return np.arange(arr.size)
    return rng.choice(arr.size, size=limit, replace=False)


def grad_check(build, eps: float = 1e-3, probe_limit: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error for each probed parameter entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``probe_limit`` caps the probes per parameter tensor (deterministic
    subsample); by default every entry is probed.
    """
    if eps <= 0:
        raise ArgumentError(f"grad_check: eps must be positive, got {eps}")
    loss, params = build()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ArgumentError("grad_check: builder must return a scalar loss tensor")
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    _KinkTracker.enabled = True
    try:
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            an_flat = an.reshape(-1)
            for idx in _probe_indices(flat, probe_limit, rng):
                orig = flat[idx]
                flat[idx] = orig + eps
                f_plus, m_plus = _eval(build)
                flat[idx] = orig - eps
                f_minus, m_minus = _eval(build)
                flat[idx] = orig
                if min(m_plus, m_minus) < eps:
                    continue
                numeric = (f_plus - f_minus) / (2 * eps)
                a = an_flat[idx]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if rel > worst:
                    worst = rel
    finally:
        _KinkTracker.enabled = False
    return worst
