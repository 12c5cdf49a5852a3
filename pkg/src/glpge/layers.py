"""Parameterized layers shared by the three networks.

Weights are drawn uniformly in +-sqrt(6 / fan_in); biases default to zero.
Every layer appends a LayerInfo record to its model's registry so parameter
counts, FLOP accounting, and structural assertions (layer counts, absence
of normalization) can be derived without running the network. Seeding uses
the Philox counter-based generator, so builds are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor


def make_rng(*key) -> np.random.Generator:
    """Deterministic Philox stream keyed by a tuple of integers.

    The tuple is expanded through SeedSequence, so any number of key parts
    yields an independent, reproducible counter-based stream.
    """
    return np.random.Generator(np.random.Philox(seed=np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class LayerInfo:
    name: str
    kind: str  # "conv" | "linear"
    cin: int
    cout: int
    k: int = 1
    stride: int = 1
    pad: int = 0

    @property
    def weight_count(self) -> int:
        if self.kind == "conv":
            return self.k * self.k * self.cin * self.cout + self.cout
        return self.cin * self.cout + self.cout


class Conv2dLayer:
    def __init__(
        self,
        rng,
        registry: list,
        name: str,
        cin: int,
        cout: int,
        k: int = 3,
        stride: int = 1,
        pad: int | None = None,
        dtype=np.float32,
        zero_weights: bool = False,
        bias_value: float = 0.0,
    ):
        pad = k // 2 if pad is None else pad
        if zero_weights:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            a = math.sqrt(6.0 / (cin * k * k))
            w = rng.uniform(-a, a, size=(cout, cin, k, k)).astype(dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.full((1, cout, 1, 1), bias_value, dtype=dtype), requires_grad=True)
        self.name = name
        self.stride = stride
        self.pad = pad
        registry.append(LayerInfo(name, "conv", cin, cout, k, stride, pad))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, self.stride, self.pad)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class LinearLayer:
    def __init__(self, rng, registry: list, name: str, fin: int, fout: int, dtype=np.float32):
        a = math.sqrt(6.0 / fin)
        self.w = Tensor(rng.uniform(-a, a, size=(fout, fin, 1, 1)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros((1, fout, 1, 1), dtype=dtype), requires_grad=True)
        self.name = name
        registry.append(LayerInfo(name, "linear", fin, fout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class ParamModel:
    """Base for models: ordered named parameters, freezing, state I/O."""

    def __init__(self):
        self.registry: list[LayerInfo] = []
        self._layers: list = []

    def _track(self, layer):
        self._layers.append(layer)
        return layer

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in self._layers:
            for name, p in layer.named_params():
                out[name] = p
        return out

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def freeze(self):
        for p in self.params():
            p.requires_grad = False

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state(self, state: dict[str, np.ndarray]):
        own = self.named_params()
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing parameters: {missing[:4]}...")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
