import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dqr.kernels import (
    GAUSSIAN,
    UNIFORM,
    KernelSpec,
    SmoothedLossParams,
    check_loss,
    gradient_weight,
    kernel_cdf,
    kernel_density,
    smoothed_check_derivative,
    smoothed_check_loss,
)

KERNELS = [KernelSpec(GAUSSIAN), KernelSpec(UNIFORM)]


def numerical_convolution(u, tau, h, kernel):
    """Independent oracle: integrate rho_tau(u - h*v) K(v) dv by quadrature."""
    def integrand(v):
        return float(check_loss(u - h * v, tau)) * float(kernel_density(kernel, v))

    lo, hi = (-1, 1) if kernel.kind == UNIFORM else (-np.inf, np.inf)
    val, _ = quad(integrand, lo, hi, limit=200)
    return val


class TestKernelSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("triangle")

    def test_second_moments(self):
        # integral of v^2 K(v) dv, cross-checked by quadrature
        for kernel in KERNELS:
            lo, hi = (-1, 1) if kernel.kind == UNIFORM else (-12, 12)
            val, _ = quad(lambda v: v * v * float(kernel_density(kernel, v)), lo, hi)
            assert kernel.second_moment == pytest.approx(val, rel=1e-8)

    def test_density_integrates_to_one(self):
        for kernel in KERNELS:
            lo, hi = (-1, 1) if kernel.kind == UNIFORM else (-12, 12)
            val, _ = quad(lambda v: float(kernel_density(kernel, v)), lo, hi)
            assert val == pytest.approx(1.0, rel=1e-9)

    def test_cdf_is_integral_of_density(self):
        for kernel in KERNELS:
            for u in (-1.5, -0.4, 0.0, 0.3, 2.0):
                lo = -1 if kernel.kind == UNIFORM else -12
                val, _ = quad(lambda v: float(kernel_density(kernel, v)), lo, u)
                assert float(kernel_cdf(kernel, u)) == pytest.approx(val, abs=1e-9)


class TestParams:
    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_bad_tau(self, tau):
        with pytest.raises(ValueError):
            SmoothedLossParams(tau=tau, h=0.5)

    @pytest.mark.parametrize("h", [0.0, -1.0])
    def test_bad_bandwidth(self, h):
        with pytest.raises(ValueError):
            SmoothedLossParams(tau=0.5, h=h)


class TestCheckLoss:
    def test_known_values(self):
        assert float(check_loss(2.0, 0.25)) == pytest.approx(0.5)
        assert float(check_loss(-2.0, 0.25)) == pytest.approx(1.5)
        assert float(check_loss(0.0, 0.7)) == 0.0

    @given(st.floats(-100, 100), st.floats(0.01, 0.99))
    def test_nonnegative(self, u, tau):
        assert float(check_loss(u, tau)) >= 0.0


class TestSmoothedLoss:
    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.8])
    @pytest.mark.parametrize("h", [0.2, 1.0])
    def test_matches_numerical_convolution(self, kernel, tau, h):
        params = SmoothedLossParams(tau=tau, h=h, kernel=kernel)
        for u in (-3.0, -0.9, -0.15, 0.0, 0.15, 0.9, 3.0):
            oracle = numerical_convolution(u, tau, h, kernel)
            assert float(smoothed_check_loss(params, u)) == pytest.approx(
                oracle, abs=1e-9)

    @pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: k.kind)
    def test_derivative_matches_finite_difference(self, kernel):
        params = SmoothedLossParams(tau=0.3, h=0.7, kernel=kernel)
        eps = 1e-6
        for u in (-2.0, -0.5, 0.1, 1.3):
            fd = (float(smoothed_check_loss(params, u + eps))
                  - float(smoothed_check_loss(params, u - eps))) / (2 * eps)
            assert float(smoothed_check_derivative(params, u)) == pytest.approx(
                fd, abs=1e-6)

    @given(st.floats(-50, 50), st.floats(-50, 50),
           st.floats(0.05, 0.95), st.floats(0.05, 5.0),
           st.sampled_from([GAUSSIAN, UNIFORM]))
    @settings(max_examples=200)
    def test_convex_in_u(self, u1, u2, tau, h, kind):
        params = SmoothedLossParams(tau=tau, h=h, kernel=KernelSpec(kind))
        mid = float(smoothed_check_loss(params, 0.5 * (u1 + u2)))
        avg = 0.5 * (float(smoothed_check_loss(params, u1))
                     + float(smoothed_check_loss(params, u2)))
        assert mid <= avg + 1e-9 * max(1.0, abs(avg))

    @given(st.floats(-50, 50), st.floats(0.05, 0.95), st.floats(0.05, 5.0),
           st.sampled_from([GAUSSIAN, UNIFORM]))
    @settings(max_examples=200)
    def test_dominates_check_loss(self, u, tau, h, kind):
        # convolving a convex function with a mean-zero kernel can only
        # increase it pointwise (Jensen)
        params = SmoothedLossParams(tau=tau, h=h, kernel=KernelSpec(kind))
        assert (float(smoothed_check_loss(params, u))
                >= float(check_loss(u, tau)) - 1e-12)

    def test_converges_to_check_loss_as_h_vanishes(self):
        for kind in (GAUSSIAN, UNIFORM):
            for u in (-1.0, 0.4, 2.5):
                params = SmoothedLossParams(tau=0.8, h=1e-6, kernel=KernelSpec(kind))
                assert float(smoothed_check_loss(params, u)) == pytest.approx(
                    float(check_loss(u, 0.8)), abs=1e-5)


class TestGradientWeight:
    @given(st.floats(-20, 20), st.floats(0.05, 0.95), st.floats(0.05, 5.0),
           st.sampled_from([GAUSSIAN, UNIFORM]))
    @settings(max_examples=200)
    def test_bounded(self, r, tau, h, kind):
        params = SmoothedLossParams(tau=tau, h=h, kernel=KernelSpec(kind))
        w = float(gradient_weight(params, r))
        assert -tau - 1e-12 <= w <= 1 - tau + 1e-12

    def test_is_negated_derivative(self):
        params = SmoothedLossParams(tau=0.35, h=0.4)
        r = np.linspace(-3, 3, 41)
        np.testing.assert_allclose(gradient_weight(params, r),
                                   -smoothed_check_derivative(params, r),
                                   atol=1e-14)

    def test_large_negative_residual_weight(self):
        # deep in the left tail the weight approaches 1 - tau
        params = SmoothedLossParams(tau=0.25, h=0.1)
        assert float(gradient_weight(params, -10.0)) == pytest.approx(0.75)
        assert float(gradient_weight(params, 10.0)) == pytest.approx(-0.25)
