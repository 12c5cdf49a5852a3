"""Finite-difference verification of the autodiff core."""

import numpy as np
import pytest

from gc_builders import BUILDERS
from glpge.diffcore import Tensor, grad_check, ops
from glpge.diffcore.ops import OP_REGISTRY
from glpge.errors import ArgumentError


def test_every_registered_op_has_a_builder():
    missing = sorted(set(OP_REGISTRY) - set(BUILDERS))
    assert not missing, f"ops without gradcheck builders: {missing}"


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_op_gradients(name):
    worst = max(grad_check(BUILDERS[name](seed), eps=1e-3) for seed in range(3))
    assert worst < 1e-3, f"{name}: max relative error {worst}"


def test_linear_graph_is_exact():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((1, 2, 4, 4))
    b = rng.standard_normal((1, 2, 4, 4))

    def build():
        ta = Tensor(a, requires_grad=True)
        tb = Tensor(b, requires_grad=True)
        return ops.mean(ops.add(ops.mul_scalar(ta, 2.5), tb)), [ta, tb]

    assert grad_check(build) < 1e-6


def test_conv_relu_mean_chain():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal((1, 3, 1, 1))

    def build():
        tx = Tensor(x, requires_grad=True)
        tw = Tensor(w, requires_grad=True)
        tb = Tensor(b, requires_grad=True)
        return ops.mean(ops.relu(ops.conv2d(tx, tw, tb, 1, 1))), [tx, tw, tb]

    assert grad_check(build, eps=1e-3) < 1e-3


def test_micro_refine_net():
    from glpge.refinenet import LocalRefineNet, RefineNetConfig, refine_graph

    model = LocalRefineNet(RefineNetConfig.micro(), dtype=np.float64)
    x = np.random.default_rng(0).random((1, 3, 16, 16))

    def build():
        out, gain, offset, _ = refine_graph(model, Tensor(x))
        return ops.mean(out), model.params()

    assert grad_check(build, eps=1e-3, probe_limit=24) < 1e-3


def test_ssim_graph():
    from glpge.losses import ssim_loss

    rng = np.random.default_rng(1)
    a = rng.random((1, 3, 16, 16))
    b = rng.random((1, 3, 16, 16))

    def build():
        ta = Tensor(a, requires_grad=True)
        tb = Tensor(b, requires_grad=True)
        return ssim_loss(ta, tb), [ta, tb]

    assert grad_check(build, eps=1e-3, probe_limit=40) < 1e-3


def test_bad_eps_rejected():
    with pytest.raises(ArgumentError):
        grad_check(BUILDERS["relu"](0), eps=0.0)
