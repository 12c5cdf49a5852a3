"""One gradient-check graph builder per registered op.

Each builder returns a closure producing (scalar loss, params) from
persistent float64 arrays, the contract grad_check expects. The acceptance
suite asserts this table covers the full op registry, so adding an op
without a builder fails loudly.
"""

import numpy as np

from glpge.diffcore import ops
from glpge.diffcore.tensor import Tensor


def _params(rng, *shapes):
    return [np.asarray(rng.standard_normal(s), dtype=np.float64) for s in shapes]


def _wrap(arrs):
    return [Tensor(a, requires_grad=True) for a in arrs]


def _builder(make_arrays, build_loss):
    def with_seed(seed):
        rng = np.random.default_rng(seed)
        arrs = make_arrays(rng)

        def build():
            tensors = _wrap(arrs)
            result = build_loss(tensors)
            if isinstance(result, tuple):
                return result
            return result, tensors

        return build

    return with_seed


def _unary(fn, transform=None, shape=(1, 2, 5, 5)):
    def make(rng):
        a = rng.standard_normal(shape)
        if transform is not None:
            a = transform(a)
        return [np.asarray(a, dtype=np.float64)]

    return _builder(make, lambda ts: ops.mean(fn(ts[0])))


def _binary(fn, shape_b=(1, 2, 5, 5), transform_b=None):
    def make(rng):
        b = rng.standard_normal(shape_b)
        if transform_b is not None:
            b = transform_b(b)
        return [rng.standard_normal((1, 2, 5, 5)), np.asarray(b, dtype=np.float64)]

    return _builder(make, lambda ts: ops.mean(fn(ts[0], ts[1])))


BUILDERS = {
    "conv2d": _builder(
        lambda rng: _params(rng, (1, 3, 6, 6), (4, 3, 3, 3), (1, 4, 1, 1)),
        lambda ts: ops.mean(ops.conv2d(ts[0], ts[1], ts[2], 1, 1)),
    ),
    "linear": _builder(
        lambda rng: _params(rng, (2, 6, 1, 1), (3, 6, 1, 1), (1, 3, 1, 1)),
        lambda ts: ops.mean(ops.linear(ts[0], ts[1], ts[2])),
    ),
    "relu": _unary(ops.relu),
    "leaky_relu": _unary(lambda t: ops.leaky_relu(t, 0.2)),
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "abs": _unary(ops.abs_val),
    "clamp01": _unary(ops.clamp01, transform=lambda a: a * 0.8 + 0.5),
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, transform_b=lambda b: np.abs(b) + 0.5),
    "add_scalar": _unary(lambda t: ops.add_scalar(t, 0.7)),
    "mul_scalar": _unary(lambda t: ops.mul_scalar(t, -1.3)),
    # the detached operand is a fixed side input: only the live path is
    # probed (blocking behavior is asserted separately in test_tensor_ops)
    "detach": _builder(
        lambda rng: _params(rng, (1, 2, 4, 4), (1, 2, 4, 4)),
        lambda ts: (ops.mean(ops.mul(ts[0], ops.detach(ts[1]))), [ts[0]]),
    ),
    "concat_batch": _binary(ops.concat_batch, shape_b=(2, 2, 5, 5)),
    "concat_channels": _builder(
        lambda rng: _params(rng, (1, 2, 4, 4), (1, 3, 4, 4)),
        lambda ts: ops.mean(ops.concat_channels([ts[0], ts[1]])),
    ),
    "slice_spatial": _unary(lambda t: ops.slice_spatial(t, 1, 0, 2, 1), shape=(1, 2, 6, 6)),
    "global_avg_pool": _unary(ops.global_avg_pool),
    "max_pool2d": _unary(ops.max_pool2d, shape=(1, 2, 6, 6)),
    "mean": _builder(lambda rng: _params(rng, (1, 2, 4, 4)), lambda ts: ops.mean(ts[0])),
    "sum": _builder(
        lambda rng: _params(rng, (1, 2, 4, 4)),
        lambda ts: ops.mul_scalar(ops.sum_all(ts[0]), 1 / 32.0),
    ),
    "reshape": _unary(lambda t: ops.reshape(t, (1, 10, 5, 1)), shape=(1, 2, 5, 5)),
    "pixel_unshuffle": _unary(lambda t: ops.pixel_unshuffle(t, 2), shape=(1, 2, 6, 6)),
    "pixel_shuffle": _unary(lambda t: ops.pixel_shuffle(t, 2), shape=(1, 8, 3, 3)),
    "resize_bilinear": _unary(lambda t: ops.resize_bilinear(t, 7, 4), shape=(1, 2, 5, 6)),
    "upsample_bilinear": _unary(lambda t: ops.upsample_bilinear(t, 2), shape=(1, 2, 5, 5)),
}
