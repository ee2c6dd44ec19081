"""
Test suite for the reverse-mode autodiff engine.

Covers first and second derivatives against central differences,
broadcasting adjoints, detached inputs, grad modes and numeric guards.
"""

import numpy as np
import pytest

from jpinn.autodiff import (
    GradDiagnostics,
    Tensor,
    elu,
    exp,
    finite_diff_check,
    grad,
    log,
    no_grad,
    sigmoid,
    swish,
    tanh,
)
from jpinn.exceptions import DomainError, NumericFailureError


def smooth_function(v: Tensor) -> Tensor:
    return exp(v[0]) * v[1] ** 2 + tanh(v[2]) * v[0] ** 2 + log(v[1] ** 2 + 1.0)


class TestDerivatives:
    """Tape derivatives against analytic and finite-difference values."""

    def test_cubic_first_and_second_derivative(self):
        """d/dx x^3 = 3x^2 and d2/dx2 x^3 = 6x through double backward."""
        x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
        (first,) = grad(x**3, [x], create_graph=True)
        (second,) = grad(first, [x])
        np.testing.assert_allclose(first.data, 3 * x.data**2)
        np.testing.assert_allclose(second.data, 6 * x.data)

    def test_first_order_matches_finite_differences(self):
        """Gradient of a smooth function agrees with central differences."""
        assert finite_diff_check(smooth_function, [0.3, 0.7, -0.4], h=1e-5) < 1e-4

    def test_second_order_matches_finite_differences(self):
        """Diagonal Hessian agrees with second central differences."""
        error = finite_diff_check(smooth_function, [0.3, 0.7, -0.4], h=1e-3, order=2, eps=1e-3)
        assert error < 1e-4

    @pytest.mark.parametrize("activation", [swish, sigmoid, tanh])
    def test_smooth_activations_second_order(self, activation):
        """Second derivatives of the smooth activations are exact on the tape."""
        def f(v):
            return activation(v * 1.3).sum()

        assert finite_diff_check(f, [0.4, -0.8, 1.1], h=1e-3, order=2, eps=1e-3) < 1e-4

    def test_elu_derivatives_away_from_zero(self):
        """ELU slope is 1 above zero and exp(a) below it."""
        a = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
        (slope,) = grad(elu(a), [a], create_graph=True)
        (curvature,) = grad(slope, [a])
        np.testing.assert_allclose(slope.data, [np.exp(-2.0), np.exp(-0.5), 1.0, 1.0])
        np.testing.assert_allclose(curvature.data, [np.exp(-2.0), np.exp(-0.5), 0.0, 0.0])

    def test_broadcast_gradients_are_summed(self):
        """Adjoints of broadcast operands sum over the stretched axes."""
        a = Tensor(np.ones((3, 1)), requires_grad=True)
        b = Tensor(np.ones((1, 4)), requires_grad=True)
        ga, gb = grad((a + b).sum(), [a, b])
        np.testing.assert_array_equal(ga.data, np.full((3, 1), 4.0))
        np.testing.assert_array_equal(gb.data, np.full((1, 4), 3.0))

    def test_matmul_gradient(self):
        """d/dW sum(x @ W) is x^T times ones."""
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = Tensor(np.zeros((2, 3)), requires_grad=True)
        (gw,) = grad((x @ w).sum(), [w])
        np.testing.assert_array_equal(gw.data, np.array([[4.0] * 3, [6.0] * 3]))

    def test_per_row_derivatives_from_summed_output(self):
        """Without cross-row coupling the gradient of the sum is per-row."""
        x = Tensor(np.array([[0.1], [0.2], [0.3]]), requires_grad=True)
        (gx,) = grad(tanh(x * 2.0), [x])
        np.testing.assert_allclose(gx.data, 2.0 * (1.0 - np.tanh(2.0 * x.data) ** 2))

    def test_repeated_evaluation_is_deterministic(self):
        """The same graph gives bit-identical gradients every time."""
        v = Tensor(np.array([0.3, 0.7, -0.4]), requires_grad=True)
        out = smooth_function(v)
        (first,) = grad(out, [v])
        (again,) = grad(out, [v])
        assert np.array_equal(first.data, again.data)


class TestGraphControl:
    """Detached inputs and grad modes."""

    def test_detached_input_gets_zero_and_diagnostic(self):
        """An input the output ignores gets zeros and is reported."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        unused = Tensor(np.array([5.0]), requires_grad=True)
        diagnostics = GradDiagnostics()
        gx, gu = grad((x * x).sum(), [x, unused], diagnostics=diagnostics)
        np.testing.assert_array_equal(gx.data, [2.0, 4.0])
        np.testing.assert_array_equal(gu.data, [0.0])
        assert diagnostics.detached == [1]

    def test_no_grad_disables_recording(self):
        """Operations inside no_grad do not record parents."""
        x = Tensor(np.array([1.0]), requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert y.parents == ()

    def test_gradient_without_create_graph_is_constant(self):
        """A plain backward pass yields non-recording gradients."""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (gx,) = grad((x**3).sum(), [x])
        assert not gx.requires_grad


class TestNumericGuards:
    """Domain and finiteness errors."""

    def test_log_of_nonpositive_reports_sample(self):
        """log(x <= 0) raises a domain error naming the first bad sample."""
        with pytest.raises(DomainError) as exc_info:
            log(Tensor(np.array([1.0, -1.0, 2.0])))
        assert exc_info.value.sample == 1
        assert exc_info.value.exit_code == 4

    def test_division_by_zero(self):
        """Dividing by an exact zero raises a domain error."""
        with pytest.raises(DomainError):
            Tensor(np.array([1.0])) / Tensor(np.array([0.0]))

    def test_overflow_is_numeric_failure(self):
        """A non-finite result aborts with the failing node."""
        with pytest.raises(NumericFailureError) as exc_info:
            exp(Tensor(np.array([1000.0])))
        assert "exp" in exc_info.value.node

    def test_finite_diff_rejects_bad_step(self):
        """The finite-difference step must be positive."""
        with pytest.raises(ValueError):
            finite_diff_check(smooth_function, [0.1, 0.2, 0.3], h=0.0)
