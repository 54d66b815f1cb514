"""Closed-form concentration bounds and their constants."""

import math

import numpy as np
import pytest
from scipy import special

from fracstrip.bounds import (BoundParams, allocate_hk, bracket_sum, empirical_c0,
                              gaussian_sup_tail, kappa, nonlinear_split, prefactor_sde,
                              psi1_constant, q_of_s, schauder_constant, sde_bound,
                              sde_bound_nonlinear, smallest_dominating_k0, spde_bound,
                              spde_bound_nonlinear)
from fracstrip.errors import (DivergentSumError, HTooLargeError, InsufficientReplicasError,
                              InvalidBoundError, ValidationError)


def brute_bracket_sum(p, N=10 ** 6):
    """Direct sum over |k| <= N plus the asymptotic tail
    ``sum_{k>N} k^{-p} (1 - p/(2k^2))`` via Hurwitz zeta."""
    k = np.arange(1, N + 1, dtype=float)
    head = 1 + 2 * math.fsum((1 + k * k) ** (-p / 2))
    tail = special.zeta(p, N + 1) - p / 2 * special.zeta(p + 2, N + 1)
    return head + 2 * tail


class TestParams:
    def test_defaults(self):
        p = BoundParams()
        assert p.K0 == 1.0 and p.r1 == 0.0 and p.c_mode == pytest.approx(4 * math.pi ** 2)

    @pytest.mark.parametrize("kw", [{"K0": 0.0}, {"r2": -1.0}, {"eta": 0.0}, {"c_mode": -1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            BoundParams(**kw)


class TestScalarPieces:
    def test_gaussian_tail_value(self):
        assert gaussian_sup_tail(1, 1, 1, 1, 2, 1) == pytest.approx(4 * math.exp(-2))
        assert 4 * math.exp(-2) == pytest.approx(0.5413, abs=1e-4)

    @pytest.mark.parametrize("gamma", [0.6, 1.0, 1.4])
    def test_doubling_G(self, gamma):
        a = gaussian_sup_tail(1.3, gamma, 0.7, 1.0, 1.5, 0.4)
        b = gaussian_sup_tail(1.3, gamma, 1.4, 1.0, 1.5, 0.4)
        assert b / a == pytest.approx(2 ** (-1 / gamma), rel=1e-14)

    def test_tail_decays(self):
        assert gaussian_sup_tail(1, 1, 1, 1, 40, 1) < 1e-300

    def test_kappa_values(self):
        assert kappa(0.3, 0.5) == pytest.approx(1.0)
        assert kappa(0.0, 0.75) == pytest.approx(1 / (1.5 * math.sqrt(math.pi) / 2))
        assert kappa(0.0, 0.75) == pytest.approx(0.75225, abs=1e-5)
        assert kappa(0.1, 0.3, r2=2.0) == pytest.approx(0.8 / (0.6 * special.gamma(0.6)))

    def test_kappa_invalid(self):
        with pytest.raises(InvalidBoundError):
            kappa(0.5, 0.5, r2=2.0)

    def test_prefactor(self):
        assert prefactor_sde(1, 3, 1, 0.5, 1) == pytest.approx(18)
        assert prefactor_sde(2, 3, 1, 0.5, 1) == pytest.approx(72)
        assert prefactor_sde(1, 6, 1, 0.5, 1) / prefactor_sde(1, 3, 1, 0.5, 1) == pytest.approx(4)


class TestSdeBound:
    def test_zero_threshold(self):
        r = sde_bound(1, 0.0, 0.05, 1, 0.01, 0.5)
        assert r.bound_value == 1.0 and r.clipped

    def test_assembly(self):
        r = sde_bound(1, 0.2, 0.05, 1, 0.01, 0.7, BoundParams(K0=3.0))
        k = kappa(0.01, 0.7)
        assert r.exponent_rate == pytest.approx(k * 0.04 / (2 * 0.0025))
        assert r.prefactor == pytest.approx(prefactor_sde(1, 4, 1, 0.7, 3.0))
        assert r.raw == pytest.approx(r.prefactor * math.exp(-r.exponent_rate))
        assert r.log_raw == pytest.approx(math.log(r.raw))

    def test_decreasing_past_crossover(self):
        hs = np.linspace(3, 6, 13) * 0.05
        vals = [sde_bound(1, h, 0.05, 1, 0.01, 0.5, BoundParams(clip=False)).raw for h in hs]
        assert np.all(np.diff(vals) < 0)

    def test_unclipped_exceeds_one(self):
        r = sde_bound(1, 0.05, 0.05, 1, 0.01, 0.5, BoundParams(K0=50.0, clip=False))
        assert r.bound_value == r.raw > 1 and not r.clipped


class TestNonlinearSde:
    def test_split_value(self):
        h0, h1 = nonlinear_split(0.1, 1.0, 1.0, 0.5)
        assert h1 == pytest.approx(0.01) and h0 == pytest.approx(0.09)

    def test_linear_case(self):
        a = sde_bound(1, 0.2, 0.05, 1.5, 0.01, 0.6)
        b = sde_bound_nonlinear(1, 0.2, 0.05, 1.5, 0.01, 0.6, 0.0)
        assert a.raw == b.raw and a.exponent_rate == b.exponent_rate

    def test_remainder_share_linear_in_h(self):
        def share(h):
            h0, _ = nonlinear_split(h, 2.0, 1.3, 0.4)
            return 1 - h0 / h
        assert share(0.01) / share(0.02) == pytest.approx(0.5, rel=0.1)

    def test_too_large(self):
        with pytest.raises(HTooLargeError):
            sde_bound_nonlinear(1, 1.0, 0.05, 1.0, 0.01, 0.5, 2.0)

    def test_records_split(self):
        r = sde_bound_nonlinear(1, 0.1, 0.05, 1.0, 0.01, 0.5, 1.0)
        assert r.inputs["h0"] == pytest.approx(0.09)


class TestModeSums:
    @pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0, 6.0])
    def test_against_brute_force(self, p):
        assert bracket_sum(p).total == pytest.approx(brute_bracket_sum(p), rel=1e-9)

    def test_p_two_closed_form(self):
        # sum_k 1/(1+k^2) = pi coth(pi)
        assert bracket_sum(2.0).total == pytest.approx(math.pi / math.tanh(math.pi), rel=1e-12)

    def test_divergent(self):
        with pytest.raises(DivergentSumError):
            bracket_sum(1.0)

    def test_large_exponent_limit(self):
        assert 1 / bracket_sum(200.0).total == pytest.approx(1.0, abs=1e-15)
        assert bracket_sum(80.0).total - 1 == pytest.approx(2 * 2.0 ** -40, rel=1e-6)

    def test_spec_pair(self):
        Q = q_of_s(0.75, 0.5)
        assert 1 / Q == pytest.approx(brute_bracket_sum(1.5), rel=1e-9)

    @pytest.mark.parametrize("H, s", [(0.75, 0.5), (0.3, 0.05)])
    def test_admissibility(self, H, s):
        with pytest.raises(ValidationError):
            q_of_s(H, s + 0.5)

    def test_c0_positive(self):
        H = 0.75
        s = np.arange(0.05, 2 * H - 0.55 + 1e-9, 0.05)
        assert empirical_c0(H, s) > 0


class TestAllocation:
    def test_zero_mode_and_monotone(self):
        a = allocate_hk(0.3, 0.3, 0.7, K=32)
        i0 = 32
        assert a.hk[i0] ** 2 == pytest.approx(a.Q * 0.09)
        right = a.hk[i0:]
        assert np.all(np.diff(right) <= 0)
        np.testing.assert_allclose(a.hk, a.hk[::-1])

    @pytest.mark.parametrize("K", [8, 64, 512])
    def test_sum_to_h2_with_tail(self, K):
        a = allocate_hk(0.3, 0.3, 0.7, K=K)
        assert a.total + a.deficit == pytest.approx(0.09, rel=1e-10)
        assert a.deficit >= 0


class TestSpdeBound:
    def test_zero_threshold(self):
        assert spde_bound(1, 0.0, 0.05, 0.3, 1.0, 0.01, 0.7).bound_value == 1.0

    def test_exponent_identity(self):
        r = spde_bound(1, 0.2, 0.05, 0.3, 1.0, 0.01, 0.7)
        expect = kappa(0.01, 0.7) * q_of_s(0.7, 0.3) * 0.04 / (2 * 0.0025)
        assert r.exponent_rate == pytest.approx(expect, rel=1e-14)
        assert "omitted" in r.notes[0]

    def test_nonlinear_m0(self):
        a = spde_bound(1, 0.2, 0.05, 0.3, 1.0, 0.01, 0.7)
        b = spde_bound_nonlinear(1, 0.2, 0.05, 0.3, 0.01, 0.7, 0.0, 2.0, 0.5, 0.3, a0=1.0)
        assert a.raw == b.raw

    def test_nu_one_when_q_equals_r(self):
        b = spde_bound_nonlinear(1, 0.001, 0.05, 0.3, 0.01, 0.7, 1.0, 2.0, 0.3, 0.3, a0=1.0)
        assert b.inputs["nu"] == 1.0
        assert b.inputs["h1"] == pytest.approx(2.0 * 1.0 * 1e-6 / 0.01)

    def test_joint_scaling(self):
        def shape(h, eps):
            b = spde_bound_nonlinear(1, h, 0.05, 0.3, eps, 0.7, 1.0, 2.0, 1.3, 0.3, a0=1.0)
            nu = b.inputs["nu"]
            return (1 - b.inputs["h0"] / h) * eps ** nu / h
        assert shape(0.002, 0.01) == pytest.approx(shape(0.001, 0.01), rel=0.1)
        assert shape(0.002, 0.01) == pytest.approx(shape(0.001, 0.005), rel=0.1)

    def test_nonlinear_too_large(self):
        with pytest.raises(HTooLargeError):
            spde_bound_nonlinear(1, 0.5, 0.05, 0.3, 0.01, 0.7, 1.0, 2.0, 0.3, 0.3, a0=1.0)


class TestSchauderConstants:
    def test_equal_indices(self):
        assert schauder_constant(0.4, 0.4) == 1.0

    @pytest.mark.parametrize("q, r", [(0.7, 0.2), (1.4, 0.4), (1.9, 0.4)])
    def test_dominates_mode_scan(self, q, r):
        b = (q - r) / 2
        t = np.geomspace(1e-8, 1, 4001)
        k = np.arange(0, 200)[:, None]
        ratio = (1 + k * k) ** b * t ** b * np.exp(-4 * math.pi ** 2 * k * k * t)
        assert ratio.max() <= schauder_constant(q, r) * (1 + 1e-9)
        assert ratio.max() >= schauder_constant(q, r) * (1 - 1e-3)

    def test_short_window(self):
        c = schauder_constant(1.9, 0.0, t_max=1e-3)
        t = np.geomspace(1e-9, 1e-3, 4001)
        k = np.arange(0, 400)[:, None]
        ratio = (1 + k * k) ** 0.95 * t ** 0.95 * np.exp(-4 * math.pi ** 2 * k * k * t)
        assert c == pytest.approx(ratio.max(), rel=1e-3)

    def test_psi1(self):
        assert psi1_constant(0.7, 0.2, 1.0) == pytest.approx(schauder_constant(0.7, 0.2) / 0.75)

    def test_rejects(self):
        with pytest.raises(ValidationError):
            schauder_constant(2.5, 0.2)


class TestK0Calibration:
    def test_synthetic_recovery(self):
        unit = np.array([0.3, 0.1, 0.03, 0.01, 0.003])
        ratio = 2 ** 0.25
        K0 = smallest_dominating_k0(unit, 2 * unit, ratio=ratio)
        assert 2 <= K0 <= 2 * ratio
        assert np.all(K0 * unit >= 2 * unit)

    def test_no_exceedances(self):
        with pytest.raises(InsufficientReplicasError):
            smallest_dominating_k0([0.1, 0.01], [0.0, 0.0])

    def test_uninformative_intervals(self):
        with pytest.raises(InsufficientReplicasError):
            smallest_dominating_k0([0.1], [0.05], [(0.0, 1.0)])

    def test_k0_positive_small_data(self):
        assert smallest_dominating_k0([10.0, 5.0], [1e-3, 1e-4]) > 0
