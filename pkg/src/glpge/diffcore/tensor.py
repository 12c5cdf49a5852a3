"""Four-dimensional tensors with reverse-mode automatic differentiation.

Every value in the compute graph is an (N, C, H, W) float array. Ops build
the graph by attaching parent links and a backward closure to their output;
``Tensor.backward`` walks the graph once in reverse topological order and
accumulates gradients additively into every reachable leaf that asked for
them. Scalars are represented as (1, 1, 1, 1) tensors.

Training runs in float32; gradient checking builds the same graphs in
float64 (see ``glpge.diffcore.gradcheck``).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ArgumentError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class _GradMode:
    """Process-wide switch: when disabled, ops skip graph bookkeeping."""

    enabled = True


class no_grad:
    """Context manager disabling graph construction (inference paths)."""

    def __enter__(self):
        self._prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _GradMode.enabled


class _KinkTracker:
    """Collects, per forward pass, how close piecewise ops came to a kink.

    Only active while a gradient check runs; ops report the distance of
    their inputs to the nearest non-differentiable point (relu/clamp edges,
    pool ties, |x| at zero) so finite-difference probes that straddle a kink
    can be discarded.
    """

    enabled = False
    min_margin = math.inf

    @classmethod
    def reset(cls):
        cls.min_margin = math.inf

    @classmethod
    def note(cls, margin: float):
        if margin < cls.min_margin:
            cls.min_margin = margin


def note_kink(margin: float):
    if _KinkTracker.enabled:
        _KinkTracker.note(float(margin))


class Tensor:
    """A 4-D float array plus optional gradient and graph node data."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N, C, H, W); got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self._parents = tuple(parents) if self.requires_grad or parents else ()
        self._backward = None
        self.op = op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- graph plumbing ------------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True) if g.dtype != self.data.dtype else g.copy()
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every requires_grad tensor reachable from here.

        The loss must be scalar. Each node is visited exactly once; a tensor
        consumed by several ops receives the sum of all branch gradients.
        """
        if self.data.size != 1:
            raise ArgumentError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _topo_order(self):
        order, visited = [], set()
        stack = [(self, iter(self._parents))]
        visited.add(id(self))
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                if id(parent) not in visited and parent.requires_grad:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
        return order


def as_tensor(x, dtype=np.float32) -> Tensor:
    """Wrap an array-like as a constant (no-grad) tensor."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data, parents, op, backward_fn) -> Tensor:
    """Shared op epilogue: wire the output node when any parent needs grad."""
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, parents=parents if needs else (), op=op)
    if needs:
        out._backward = backward_fn
    return out
