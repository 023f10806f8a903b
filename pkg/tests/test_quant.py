"""Quantizer unit tests.

Expected values for the non-trivial cases were computed by hand from the
round/saturate definition (e.g. 0.1234/0.0625 = 1.9744 -> level 2) and the
step search is cross-checked against an exhaustive scan oracle below.
"""

import math

import numpy as np
import pytest

from qasr.quant import (
    QuantScheme,
    dequantize,
    quantize,
    rescale_levels,
    round_half_away,
    search_step,
)


def brute_force_best_step(values, bits):
    """Independent scan over the same candidate exponents, tracking SSE."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    max_abs = float(np.max(np.abs(arr)))
    lo = math.floor(math.log2(max_abs)) - (bits + 2)
    hi = math.ceil(math.log2(max_abs)) + 2
    m = (1 << (bits - 1)) - 1
    results = {}
    for e in range(lo, hi + 1):
        step = 2.0**e
        lev = np.clip(np.sign(arr) * np.floor(np.abs(arr) / step + 0.5), -m, m)
        results[e] = float(np.sum((arr - lev * step) ** 2))
    return results


class TestQuantScheme:
    def test_valid(self):
        s = QuantScheme(bits=6, step=0.0625)
        assert s.max_level == 31
        assert s.step_exp == -4
        assert s.max_value == pytest.approx(1.9375)

    def test_rejects_bad_bits(self):
        with pytest.raises(ValueError):
            QuantScheme(bits=1, step=0.5)

    @pytest.mark.parametrize("step", [0.0, -0.5, 0.3, float("inf"), float("nan")])
    def test_rejects_bad_step(self, step):
        with pytest.raises(ValueError):
            QuantScheme(bits=6, step=step)


class TestQuantize:
    def test_zero_is_fixed_point(self):
        q = quantize(0.0, QuantScheme(bits=6, step=0.0625))
        assert q.levels == 0
        assert dequantize(q) == 0.0

    def test_round_to_nearest(self):
        # 0.1234 / 0.0625 = 1.9744 rounds to level 2 -> 0.125
        q = quantize(0.1234, QuantScheme(bits=6, step=0.0625))
        assert q.levels == 2
        assert dequantize(q) == 0.125

    def test_saturation(self):
        # 10.0 / 0.0625 = 160 clips at 2^5 - 1 = 31 -> 1.9375
        q = quantize(10.0, QuantScheme(bits=6, step=0.0625))
        assert q.levels == 31
        assert dequantize(q) == 1.9375

    def test_ties_away_from_zero(self):
        s = QuantScheme(bits=8, step=1.0)
        assert quantize(0.5, s).levels == 1
        assert quantize(-0.5, s).levels == -1
        assert quantize(1.5, s).levels == 2

    def test_rejects_non_finite_with_location(self):
        s = QuantScheme(bits=6, step=0.0625)
        bad = np.array([[0.0, 1.0], [np.nan, 2.0]])
        with pytest.raises(ValueError, match=r"\(1, 0\)"):
            quantize(bad, s)

    def test_idempotence(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=1000) * 3.0
        s = QuantScheme(bits=6, step=0.0625)
        once = quantize(x, s)
        twice = quantize(dequantize(once), s)
        np.testing.assert_array_equal(once.levels, twice.levels)

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=1000)
        s = QuantScheme(bits=8, step=2.0**-6)
        np.testing.assert_array_equal(
            quantize(-x, s).levels, -quantize(x, s).levels
        )

    def test_error_bound_half_step(self):
        rng = np.random.default_rng(9)
        s = QuantScheme(bits=8, step=2.0**-5)
        # stay inside the non-saturated range
        x = rng.uniform(-s.max_value, s.max_value, size=5000)
        err = np.abs(x - dequantize(quantize(x, s)))
        assert err.max() <= s.step / 2 + 1e-15


class TestSearchStep:
    def test_exact_pair(self):
        s = search_step(np.array([-1.0, 1.0]), bits=2)
        assert s.step == 1.0
        q = quantize(np.array([-1.0, 1.0]), s)
        np.testing.assert_array_equal(dequantize(q), [-1.0, 1.0])

    def test_single_value_exact(self):
        s = search_step(np.array([0.5]), bits=6)
        assert s.step == 2.0**-5
        assert quantize(0.5, s).levels == 16

    def test_optimal_against_scan(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-1.0, 1.0, size=4000)
        s = search_step(x, bits=6)
        scan = brute_force_best_step(x, bits=6)
        q = quantize(x, s)
        sse = float(np.sum((x - dequantize(q)) ** 2))
        assert sse <= min(scan.values()) + 1e-12
        assert sse == pytest.approx(scan[s.step_exp])

    def test_all_zero_falls_back(self):
        with pytest.warns(UserWarning):
            s = search_step(np.zeros(4), bits=6)
        assert s.step == 2.0**-5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            search_step(np.array([]), bits=6)


def test_round_half_away_scalar_and_array():
    np.testing.assert_array_equal(
        round_half_away(np.array([-2.5, -0.5, 0.0, 0.5, 1.5])),
        [-3.0, -1.0, 0.0, 1.0, 2.0],
    )


def test_rescale_levels_exact_shift():
    s = QuantScheme(bits=16, step=2.0**-8)
    lev = np.array([12, -7, 300])
    # scale 2^-10 -> 2^-8 divides by 4 with rounding
    out = rescale_levels(lev, from_exp=-10, scheme=s)
    np.testing.assert_array_equal(out, [3.0, -2.0, 75.0])
