"""Adam update semantics."""

import numpy as np
import pytest

from glpge.diffcore.optim import AdamState, adam_step
from glpge.errors import ShapeError


def test_zero_gradient_leaves_params_unchanged():
    p = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    state = AdamState()
    adam_step([p], [np.zeros_like(p)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])
    assert state.t == 1


def test_first_step_unit_gradient():
    # bias correction makes m_hat = v_hat = 1, so the step is ~lr
    p = np.array([0.5], dtype=np.float64)
    state = AdamState(lr=1e-4)
    adam_step([p], [np.array([1.0])], state)
    assert p[0] == pytest.approx(0.5 - 1e-4, rel=1e-6)


def test_two_identical_steps_recurrence():
    p = np.array([0.0], dtype=np.float64)
    g = np.array([0.7])
    state = AdamState()
    adam_step([p], [g], state)
    m1 = state.m[0].copy()
    adam_step([p], [g], state)
    assert state.t == 2
    np.testing.assert_allclose(state.m[0], 0.9 * m1 + 0.1 * g, rtol=1e-12)


def test_defaults_match_training_recipe():
    state = AdamState()
    assert (state.lr, state.beta1, state.beta2) == (1e-4, 0.9, 0.99)


def test_shape_mismatch_raises():
    state = AdamState()
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [np.zeros(2)], state)


def test_deterministic_given_inputs():
    results = []
    for _ in range(2):
        p = np.linspace(-1, 1, 5)
        state = AdamState()
        for step in range(3):
            adam_step([p], [np.sin(p + step)], state)
        results.append(p.copy())
    np.testing.assert_array_equal(results[0], results[1])
