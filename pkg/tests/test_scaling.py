"""Scaling-scheme factors, square sums, and the boundedness test."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from resnet_kernels.scaling import (
    ScalingScheme,
    custom,
    decreasing,
    is_stable,
    lambda_at,
    lambda_sq_profile,
    load_custom,
    sum_lambda_sq,
    uniform,
    unscaled,
)

# direct high-precision summation oracle, frozen as a regression constant
DECREASING_SUM_L1000 = 3.2429855230430347


class TestLambdaAt:
    def test_uniform(self):
        assert lambda_at(uniform(), 3, 4) == pytest.approx(0.5, abs=1e-15)

    def test_decreasing_first_block(self):
        assert lambda_at(decreasing(), 1, 10) == pytest.approx(1.0 / math.log(2.0), rel=1e-12)

    def test_unscaled(self):
        assert lambda_at(unscaled(), 7, 10) == 1.0

    def test_out_of_range_raises(self):
        with pytest.raises(IndexError):
            lambda_at(uniform(), 0, 4)
        with pytest.raises(IndexError):
            lambda_at(uniform(), 5, 4)

    def test_custom_too_short_raises(self):
        scheme = custom([0.5, 0.25])
        with pytest.raises(IndexError):
            lambda_at(scheme, 3, 3)

    def test_custom_values_validated(self):
        with pytest.raises(ValueError):
            custom([0.5, -1.0])
        with pytest.raises(ValueError):
            custom([2e6])

    @given(st.integers(1, 200), st.integers(0, 200))
    def test_profile_matches_pointwise(self, l, extra):
        L = l + extra
        prof = lambda_sq_profile(decreasing(), L)
        assert prof[l - 1] == pytest.approx(lambda_at(decreasing(), l, L) ** 2, rel=1e-12)


class TestSumLambdaSq:
    def test_uniform_is_unity(self):
        assert sum_lambda_sq(uniform(), 128) == pytest.approx(1.0, abs=1e-12)

    def test_unscaled_counts_blocks(self):
        assert sum_lambda_sq(unscaled(), 50) == 50.0

    def test_decreasing_regression_value(self):
        # oracle: math.fsum of 1/(l ln^2(l+1)); finite, slowly growing
        oracle = math.fsum(1.0 / (l * math.log(l + 1) ** 2) for l in range(1, 1001))
        assert oracle == pytest.approx(DECREASING_SUM_L1000, abs=1e-12)
        assert sum_lambda_sq(decreasing(), 1000) == pytest.approx(oracle, rel=1e-12)

    def test_nondecreasing_in_depth_for_fixed_factors(self):
        sums = [sum_lambda_sq(decreasing(), L) for L in (10, 100, 1000, 2000)]
        assert all(b > a for a, b in zip(sums, sums[1:]))


class TestIsStable:
    PROBES = [10, 100, 1000]

    def test_unscaled_unstable(self):
        assert is_stable(unscaled(), self.PROBES) is False

    def test_uniform_stable(self):
        assert is_stable(uniform(), self.PROBES) is True

    def test_decreasing_stable(self):
        assert is_stable(decreasing(), self.PROBES) is True

    def test_custom_heuristic_bounded(self):
        # geometric factors: square sum converges fast
        scheme = custom([0.5**k for k in range(1, 1001)])
        assert is_stable(scheme, self.PROBES) is True

    def test_custom_heuristic_unbounded(self):
        scheme = custom([1.0] * 1000)
        assert is_stable(scheme, self.PROBES) is False

    def test_probe_validation(self):
        with pytest.raises(ValueError):
            is_stable(uniform(), [])
        with pytest.raises(ValueError):
            is_stable(uniform(), [10, 10])


class TestSchemeObject:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ScalingScheme("geometric")

    def test_decreasing_factors_strictly_decreasing(self):
        prof = lambda_sq_profile(decreasing(), 10_000)
        assert np.all(np.diff(prof) < 0.0)

    def test_load_custom_roundtrip(self, tmp_path):
        path = tmp_path / "factors.txt"
        path.write_text("0.5\n0.25\n\n0.125\n")
        scheme = load_custom(path)
        assert scheme.custom_values == (0.5, 0.25, 0.125)
