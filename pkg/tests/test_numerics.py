"""Numerical kernels: SPD solves, chi-square tails, quantiles, scalar search."""

from __future__ import annotations

import math

import numpy as np
import pytest

from nmacompare import NumericError, chi_square_sf, minimize_scalar, normal_quantile, solve_spd


class TestSolveSpd:
    def test_identity(self):
        result = solve_spd(np.eye(3), np.array([1.0, 2.0, 3.0]))
        assert np.allclose(result.solution, [1.0, 2.0, 3.0])
        assert result.log_det == 0.0

    def test_diagonal(self):
        result = solve_spd(np.diag([4.0, 9.0]), np.array([8.0, 27.0]))
        assert np.allclose(result.solution, [2.0, 3.0])
        assert result.log_det == pytest.approx(math.log(36.0), abs=1e-12)

    def test_random_spd_multiply_back(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = rng.normal(size=(5, 5))
            a = m.T @ m + np.eye(5)
            b = rng.normal(size=5)
            x = solve_spd(a, b).solution
            assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1e-10

    def test_multiple_rhs(self):
        rng = np.random.default_rng(4)
        m = rng.normal(size=(4, 4))
        a = m.T @ m + np.eye(4)
        b = rng.normal(size=(4, 3))
        x = solve_spd(a, b).solution
        assert x.shape == (4, 3)
        assert np.allclose(a @ x, b, atol=1e-10)

    def test_log_det_scaling(self):
        rng = np.random.default_rng(5)
        m = rng.normal(size=(4, 4))
        a = m.T @ m + np.eye(4)
        base = solve_spd(a, np.ones(4)).log_det
        for c in (0.5, 2.0, 37.0):
            scaled = solve_spd(c * a, np.ones(4)).log_det
            assert scaled == pytest.approx(4 * math.log(c) + base, abs=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(NumericError, match="not positive definite"):
            solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))

    def test_not_symmetric(self):
        with pytest.raises(NumericError, match="not symmetric"):
            solve_spd(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))


class TestChiSquareSf:
    def test_reference_values(self):
        assert chi_square_sf(82.25, 23) == pytest.approx(1.37e-8, rel=0.02)
        assert chi_square_sf(23.51, 10) == pytest.approx(0.009, rel=0.05)

    def test_zero_statistic(self):
        for df in (1, 2, 7, 100):
            assert chi_square_sf(0.0, df) == 1.0

    def test_df2_closed_form(self):
        for x in (0.1, 1.0, 5.0, 30.0, 200.0):
            assert chi_square_sf(x, 2) == pytest.approx(math.exp(-x / 2), abs=1e-12)

    def test_strictly_decreasing(self):
        xs = np.linspace(0.0, 60.0, 200)
        values = [chi_square_sf(float(x), 7) for x in xs]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_even_df_against_poisson_sum_oracle(self):
        """For even df, sf(x, df) = exp(-x/2) * sum_{k<df/2} (x/2)^k / k!.

        Evaluated in log space, this closed form is an independent route to
        the same tail; agreement is required to 1e-12 absolute across the
        supported range (x <= 1000, df <= 200).
        """

        def oracle(x: float, df: int) -> float:
            half = x / 2.0
            if half == 0.0:
                return 1.0
            terms = [k * math.log(half) - math.lgamma(k + 1) for k in range(df // 2)]
            peak = max(terms)
            return math.exp(-half + peak) * math.fsum(math.exp(t - peak) for t in terms)

        for df in (2, 4, 10, 24, 60, 120, 200):
            for x in (0.0, 0.5, 3.7, 23.51, 82.25, 190.15, 400.0, 1000.0):
                assert abs(chi_square_sf(x, df) - oracle(x, df)) <= 1e-12

    def test_df1_against_erfc_oracle(self):
        # sf(x, 1) = P(|Z| > sqrt(x)) = erfc(sqrt(x/2))
        for x in (0.01, 1.0, 3.84, 10.0, 50.0, 300.0):
            assert chi_square_sf(x, 1) == pytest.approx(
                math.erfc(math.sqrt(x / 2.0)), rel=1e-12, abs=1e-300
            )

    def test_zero_df_rejected(self):
        with pytest.raises(NumericError, match="zero degrees of freedom"):
            chi_square_sf(1.0, 0)

    def test_negative_statistic_rejected(self):
        with pytest.raises(NumericError):
            chi_square_sf(-0.5, 3)


class TestNormalQuantile:
    def test_97_5_percent(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_against_erf_inversion(self):
        """Oracle: bisect the CDF built from the error function."""

        def cdf(x: float) -> float:
            return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

        def invert(p: float) -> float:
            lo, hi = -10.0, 10.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if cdf(mid) < p:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)

        assert normal_quantile(0.841344746) == pytest.approx(1.0, abs=1e-6)
        for p in (0.01, 0.1, 0.25, 0.6, 0.841344746, 0.975, 0.999):
            assert normal_quantile(p) == pytest.approx(invert(p), abs=1e-9)

    def test_antisymmetry(self):
        for p in (0.001, 0.05, 0.3, 0.49):
            assert normal_quantile(1 - p) == pytest.approx(-normal_quantile(p), abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, p):
        with pytest.raises(NumericError):
            normal_quantile(p)


class TestMinimizeScalar:
    def test_quadratic(self):
        assert minimize_scalar(lambda x: (x - 2.0) ** 2, 0.0, 10.0, tol=1e-8) == pytest.approx(
            2.0, abs=1e-7
        )

    def test_cosine(self):
        assert minimize_scalar(math.cos, 0.0, 2.0 * math.pi, tol=1e-8) == pytest.approx(
            math.pi, abs=1e-7
        )

    def test_multimodal_finds_global(self):
        # local minimum at 8 (value -1), global at 2 (value -3)
        def f(x: float) -> float:
            return -3.0 * math.exp(-((x - 2.0) ** 2) / 0.02) - math.exp(
                -((x - 8.0) ** 2) / 0.02
            )

        assert minimize_scalar(f, 0.0, 10.0, tol=1e-8) == pytest.approx(2.0, abs=1e-6)

    def test_boundary_minimum(self):
        assert minimize_scalar(lambda x: x, 0.0, 5.0, tol=1e-8) == pytest.approx(0.0, abs=1e-7)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError, match="non-finite"):
            minimize_scalar(lambda x: float("nan"), 0.0, 1.0)

    def test_empty_bracket_rejected(self):
        with pytest.raises(NumericError, match="bracket"):
            minimize_scalar(lambda x: x, 1.0, 1.0)
