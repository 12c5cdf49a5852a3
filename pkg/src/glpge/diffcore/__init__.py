"""Minimal reverse-mode autodiff core: tensors, ops, Adam, gradient checks."""

from . import ops
from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .ops import OP_REGISTRY
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "OP_REGISTRY",
    "Tensor",
    "adam_step",
    "as_tensor",
    "grad_check",
    "no_grad",
    "ops",
]
