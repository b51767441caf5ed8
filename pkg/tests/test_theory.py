import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from sphereq import theory
from sphereq.errors import ConfigError

DIMS = [5, 20, 100, 1000, 10_000, 100_000]


class TestShannon:
    @pytest.mark.parametrize("d", DIMS)
    def test_constant_matches_mpmath(self, d):
        assert theory.shannon_constant(d) == pytest.approx(oracles.shannon_constant(d), rel=1e-11)

    @pytest.mark.parametrize("d,value", [(100, 0.936), (1000, 0.991), (10_000, 0.999)])
    def test_reference_values(self, d, value):
        assert round(theory.shannon_constant(d), 3) == value

    def test_rate_zero(self):
        assert theory.shannon_lower_bound(100, 0) == theory.shannon_constant(100)

    def test_bound_formula(self):
        d, b = 64, 2.5
        assert theory.shannon_lower_bound(d, b) == pytest.approx(
            oracles.shannon_constant(d) * 0.25 ** (b * d / (d - 1)), rel=1e-11
        )

    @given(st.integers(3, 5000), st.floats(0, 7), st.floats(0.01, 1))
    def test_decreasing_in_bits(self, d, b, step):
        assert theory.shannon_lower_bound(d, b + step) < theory.shannon_lower_bound(d, b)

    def test_increasing_in_dimension(self):
        for b in (1, 2, 4):
            vals = [theory.shannon_lower_bound(d, b) for d in (10, 30, 100, 300, 1000, 10_000)]
            assert np.all(np.diff(vals) > 0)
            assert vals[-1] < 4.0**-b

    def test_domain(self):
        with pytest.raises(ConfigError):
            theory.shannon_constant(2)
        with pytest.raises(ConfigError):
            theory.shannon_lower_bound(10, -1)


class TestIdealSphere:
    @pytest.mark.parametrize("d", DIMS)
    def test_constant_matches_mpmath(self, d):
        assert theory.ideal_sphere_constant(d) == pytest.approx(oracles.ideal_sphere_constant(d), rel=1e-11)

    @pytest.mark.parametrize("d,value", [(100, 1.055), (1000, 1.008), (10_000, 1.001)])
    def test_reference_values(self, d, value):
        assert round(theory.ideal_sphere_constant(d), 3) == value

    @pytest.mark.parametrize("d", [100, 1000, 10_000])
    def test_above_shannon(self, d):
        assert theory.ideal_sphere_constant(d) > theory.shannon_constant(d)

    def test_limits(self):
        assert abs(theory.shannon_constant(100_000) - 1) < 0.01
        assert abs(theory.ideal_sphere_constant(100_000) - 1) < 0.01


class TestHighRate:
    @pytest.mark.parametrize("p", [1, 2, 3])
    @pytest.mark.parametrize("d", [10, 100, 1024, 20_000])
    def test_matches_density_quadrature(self, p, d):
        expect = d * oracles.tessellation_g(p) * oracles.block_density_integral(p, d)
        assert theory.highrate_constant(p, d) == pytest.approx(expect, rel=1e-10)

    def test_closed_form_p2(self):
        d = 500
        j = 8 * math.pi * (d - 2) / d**2
        assert theory.block_moment_factor(2, d) == pytest.approx(j, rel=1e-12)

    @pytest.mark.parametrize(
        "p,limit", [(1, math.sqrt(3) * math.pi / 2), (2, 10 * math.pi / (9 * math.sqrt(3)))]
    )
    def test_limits_closed_form(self, p, limit):
        assert theory.highrate_limit(p) == pytest.approx(limit, rel=1e-14)
        assert theory.highrate_constant(p, 10**7) == pytest.approx(limit, rel=1e-6)

    @pytest.mark.parametrize("p,value", [(1, 2.721), (2, 2.015), (3, 1.770)])
    def test_reference_values(self, p, value):
        assert round(theory.highrate_limit(p), 3) == value

    def test_p3_at_large_d(self):
        assert theory.highrate_constant(3, 100_000) == pytest.approx(1.770, abs=0.01)

    def test_tessellation_constants(self):
        for p in (1, 2, 3):
            assert theory.TESSELLATION_G[p] == pytest.approx(oracles.tessellation_g(p), rel=1e-15)

    def test_domain(self):
        with pytest.raises(ConfigError):
            theory.highrate_constant(4, 100)
        with pytest.raises(ConfigError):
            theory.highrate_constant(3, 5)


class TestRatioConstant:
    def test_eden_b1(self):
        assert theory.ratio_ip_constant(0.3633802276) == pytest.approx(0.5707963268, abs=1e-9)

    def test_block_p3_b2(self):
        assert theory.ratio_ip_constant(0.101331) == pytest.approx(0.112757, abs=1e-6)

    def test_zero_and_dimension(self):
        assert theory.ratio_ip_constant(0.0) == 0.0
        assert theory.ratio_ip_constant(0.2, 101) == pytest.approx(0.25 / 100)

    def test_domain(self):
        with pytest.raises(ConfigError):
            theory.ratio_ip_constant(1.0)


class TestRabitQGaussian:
    @pytest.mark.parametrize("bits,alpha", [(1, 0.8), (2, 1.0), (3, 0.6), (4, 0.3)])
    def test_objective_matches_quadrature(self, bits, alpha):
        assert theory.rabitq_gaussian_objective(alpha, bits) == pytest.approx(
            oracles.rabitq_gaussian_objective_quad(alpha, bits), rel=1e-12
        )

    def test_objective_b1_closed_form(self):
        # E(g - alpha sgn(g)/2)^2 = 1 - alpha sqrt(2/pi) + alpha^2/4.
        for alpha in (0.5, 1.6, 3.0):
            expect = 1 - alpha * math.sqrt(2 / math.pi) + alpha**2 / 4
            assert theory.rabitq_gaussian_objective(alpha, 1) == pytest.approx(expect, rel=1e-13)

    @pytest.mark.parametrize("bits", [1, 2, 3, 4])
    def test_optimum_matches_golden_section(self, bits):
        alpha, phi = theory.rabitq_gaussian_optimum(bits)
        ref_alpha, ref_phi = oracles.rabitq_gaussian_optimum_golden(bits, alpha * 0.8, alpha * 1.25)
        assert alpha == pytest.approx(ref_alpha, abs=1e-6)
        assert phi == pytest.approx(ref_phi, abs=1e-10)

    def test_b1_optimum_closed_form(self):
        alpha, phi = theory.rabitq_gaussian_optimum(1)
        assert alpha == pytest.approx(2 * math.sqrt(2 / math.pi), abs=1e-8)
        assert phi == pytest.approx(1 - 2 / math.pi, abs=1e-12)

    def test_domain(self):
        with pytest.raises(ConfigError):
            theory.rabitq_gaussian_objective(0.0, 2)


class TestTable:
    def test_structure(self):
        table = theory.theory_table([10, 1024], ps=(1, 2, 3), bits=(1, 2))
        assert [r["d"] for r in table["rows"]] == [10, 1024]
        row = table["rows"][1]
        assert row["c_d"] == theory.shannon_constant(1024)
        assert set(row["highrate"]) == {"1", "2", "3"}
        assert row["highrate"]["3"]["upper_bound_tessellation"] is True
        assert set(row["shannon_bound"]) == {"1", "2"}

    def test_small_d_skips_large_blocks(self):
        row = theory.theory_table([5])["rows"][0]
        assert set(row["highrate"]) == {"1", "2"}
