"""Confidence intervals, chunked parallel maps and the exponential integrators."""

import math

import numpy as np
import pytest

from fracstrip.errors import BlowUpError, ValidationError
from fracstrip.parallel import map_chunks
from fracstrip.schemes import integrate_linear, integrate_nonlinear, linear_step_factors, phi1
from fracstrip.stats import (MCEstimate, fit_log_slope, jackknife_variance, proportion_estimate,
                             wilson_interval)


class TestWilson:
    def test_textbook_value(self):
        # 8 of 10 at 95%: Wilson interval (0.4902, 0.9433)
        lo, hi = wilson_interval(8, 10, 0.95)
        assert lo == pytest.approx(0.4902, abs=1e-4)
        assert hi == pytest.approx(0.9433, abs=1e-4)

    @pytest.mark.parametrize("k", [0, 1000])
    def test_extremes_bracket_point(self, k):
        e = proportion_estimate(k, 1000)
        assert e.ci_low <= e.value <= e.ci_high
        assert e.ci_high - e.ci_low > 0
        assert e.count == k

    def test_zero_trials(self):
        with pytest.raises(ValidationError):
            wilson_interval(0, 0)

    def test_estimate_rejects_inconsistent_ci(self):
        with pytest.raises(ValidationError):
            MCEstimate(0.5, 0.6, 0.7, 10)


class TestJackknife:
    def test_matches_sample_variance(self, rng):
        x = rng.standard_normal((4000, 3)) * np.array([1.0, 2.0, 0.5])
        var, hw = jackknife_variance(x, 0.95)
        np.testing.assert_allclose(var, x.var(axis=0, ddof=1))
        # normal data: se(s^2) ~ s^2 sqrt(2/(n-1))
        np.testing.assert_allclose(hw, 1.96 * var * math.sqrt(2 / 3999), rtol=0.15)

    def test_brute_force_loo(self, rng):
        x = rng.standard_normal(12)
        loo = np.array([np.delete(x, i).var(ddof=1) for i in range(12)])
        se = math.sqrt(11 / 12 * ((loo - loo.mean()) ** 2).sum())
        _, hw = jackknife_variance(x, 0.95)
        assert hw == pytest.approx(1.959964 * se, rel=1e-6)


class TestSlopeFit:
    def test_exact_line(self):
        z = np.linspace(3, 8, 6)
        p = 0.5 * np.exp(-1.3 * z)
        slope, se, used = fit_log_slope(z, p, np.full(6, 10), 10 ** 6)
        assert slope == pytest.approx(1.3, rel=1e-10)
        assert used.all()

    def test_drops_empty_thresholds(self):
        z = np.array([1.0, 2.0, 3.0])
        slope, _, used = fit_log_slope(z, np.array([0.1, 0.01, 0.0]), np.array([100, 10, 0]), 1000)
        assert slope == pytest.approx(math.log(10))
        assert used.tolist() == [True, True, False]

    def test_needs_two_points(self):
        with pytest.raises(ValidationError):
            fit_log_slope([1.0, 2.0], [0.1, 0.0], [5, 0], 50)


class TestMapChunks:
    @pytest.mark.parametrize("threads", [1, 3])
    def test_order_preserved(self, threads):
        parts = map_chunks(lambda a, b: list(range(a, b)), 1100, chunk=100, threads=threads)
        assert sum(parts, []) == list(range(1100))

    def test_empty(self):
        assert map_chunks(lambda a, b: a, 0) == []


class TestPhi1:
    @pytest.mark.parametrize("z", [-50.0, -1.0, -1e-9, 0.0, 1e-9, 0.5])
    def test_definition(self, z):
        expect = 1.0 if z == 0 else math.expm1(z) / z
        assert phi1(z) == pytest.approx(expect, rel=1e-12)


class TestLinearIntegrator:
    def test_deterministic_decay(self):
        eps, N = 0.01, 200
        t = np.linspace(0, 1, N + 1)
        E, w = linear_step_factors(-np.diff(t) / eps)
        x = integrate_linear(E, w, 0.0, np.zeros(N), 1.0)
        np.testing.assert_allclose(x, np.exp(-t / eps), rtol=1e-12)

    def test_batched_shapes(self, rng):
        E, w = linear_step_factors(np.full(10, -0.1))
        dW = rng.standard_normal((7, 10))
        x = integrate_linear(E, w, 1.0, dW)
        assert x.shape == (7, 11)
        np.testing.assert_array_equal(x[3], integrate_linear(E, w, 1.0, dW[3]))

    def test_guard(self):
        E, w = linear_step_factors(np.full(50, 1.0))
        with pytest.raises(BlowUpError):
            integrate_linear(E, w, 0.0, np.zeros(50), 1.0, guard=1e3)


class TestNonlinearIntegrator:
    def test_linear_drift_matches_linear_scheme(self, rng):
        t = np.linspace(0, 1, 101)
        dW = rng.standard_normal(100) * 0.1
        E, w = linear_step_factors(-2.0 * np.diff(t) / 0.05)
        ref = integrate_linear(E, w, 0.3, dW, 0.7)
        x = integrate_nonlinear(lambda s, x: -2.0 * x, lambda s, x: -2.0 + 0 * x, t, 0.05, 0.3,
                                dW, 0.7)
        np.testing.assert_allclose(x, ref, rtol=1e-12, atol=1e-14)

    def test_cubic_reaches_equilibrium(self):
        t = np.linspace(0, 1, 401)
        x = integrate_nonlinear(lambda s, x: x - x ** 3, lambda s, x: 1 - 3 * x ** 2, t, 0.01,
                                0.0, np.zeros(400), -0.5)
        assert x[-1] == pytest.approx(-1.0, abs=1e-10)
