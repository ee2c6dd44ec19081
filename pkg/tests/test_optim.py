"""
Test suite for gradient clipping and the Adam update.
"""

import numpy as np
import pytest

from jpinn.config import TrainConfig
from jpinn.models import AdamState, adam_step, clip_by_global_norm


@pytest.fixture
def config() -> TrainConfig:
    return TrainConfig(learning_rate=0.01, clip_norm=1.0, epsilon=1e-3)


class TestClipping:
    def test_rescales_to_max_norm(self):
        clipped, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(np.concatenate(clipped), [0.6, 0.8])

    def test_small_gradients_untouched(self):
        grads = [np.array([0.1, 0.2])]
        clipped, _ = clip_by_global_norm(grads, 1.0)
        np.testing.assert_array_equal(clipped[0], grads[0])
        assert clipped[0] is not grads[0]

    def test_zero_gradient(self):
        clipped, norm = clip_by_global_norm([np.zeros(3)], 1.0)
        assert norm == 0.0
        np.testing.assert_array_equal(clipped[0], np.zeros(3))


class TestAdam:
    def test_zero_gradient_leaves_parameters(self, config):
        params = [np.array([1.0, -2.0])]
        new, state = adam_step(params, [np.zeros(2)], AdamState(), config)
        np.testing.assert_array_equal(new[0], params[0])
        assert state.step == 1

    def test_first_step_size(self, config):
        """A steady gradient moves by lr * g / (|g| + eps) on the first step."""
        new, _ = adam_step([np.array([0.0])], [np.array([0.5])], AdamState(), config)
        assert new[0][0] == pytest.approx(-0.01 * 0.5 / 0.501)

    def test_literal_beta1(self):
        config = TrainConfig(literal_beta1=True)
        assert config.effective_beta1 == 0.09

    def test_inputs_not_modified(self, config):
        params = [np.array([1.0])]
        adam_step(params, [np.array([0.3])], AdamState(), config)
        assert params[0][0] == 1.0

    def test_mismatched_lengths(self, config):
        with pytest.raises(ValueError):
            adam_step([np.zeros(1)], [], AdamState(), config)
