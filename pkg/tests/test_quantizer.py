"""Quantize/dequantize operations under all three rounding modes.

Monte Carlo expectations are frozen against their analytic two-point
distributions; the nearest-rounding implementation is checked against a
brute-force argmin oracle over randomized inputs.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowbit_optim.levels import (
    SchemeKind,
    build_de_levels,
    build_linear_levels,
    build_log_levels,
    radius_stats,
    table_for,
)
from lowbit_optim.quantizer import (
    RATIO_MAX,
    RATIO_MIN,
    BlockQuantization,
    RoundingMode,
    compute_log_base,
    compute_scale,
    dequantize,
    dequantize_block,
    quantize_block,
    quantize_log_dither,
    quantize_nearest,
    quantize_stochastic,
    tensor_quantile,
)


class TestScaleAndQuantile:
    def test_scale_is_max_abs(self):
        assert compute_scale([0.2, -0.7, 0.5]) == pytest.approx(0.7)

    def test_scale_zero_block(self):
        assert compute_scale([0.0, 0.0, 0.0]) == 0.0

    def test_scale_single_tiny(self):
        assert compute_scale([1e-30]) == 1e-30

    def test_scale_rejects_empty(self):
        with pytest.raises(ValueError):
            compute_scale([])

    def test_quantile_nearest_rank(self):
        assert tensor_quantile(np.arange(1, 101), 0.1) == 10

    def test_quantile_constant(self):
        assert tensor_quantile(np.full(37, 2.5), 0.7) == 2.5

    def test_quantile_singleton(self):
        assert tensor_quantile([0.5], 0.3) == 0.5

    def test_quantile_rejects(self):
        with pytest.raises(ValueError):
            tensor_quantile([], 0.5)
        with pytest.raises(ValueError):
            tensor_quantile([1.0], 0.0)


class TestLogBase:
    def test_exact_power(self):
        assert compute_log_base(2**-3, 1.0, 2) == pytest.approx(0.5)

    def test_clamps_ratio_above(self):
        base = compute_log_base(1.0, 1.0, 2)
        assert base == pytest.approx(RATIO_MAX ** (1 / 3))
        assert base < 1.0

    def test_clamps_ratio_below(self):
        base = compute_log_base(0.0, 1.0, 4)
        assert base == pytest.approx(RATIO_MIN ** (1 / 15))
        assert base > 0.0

    def test_rejects_zero_scale(self):
        with pytest.raises(ValueError):
            compute_log_base(0.1, 0.0, 2)


class TestNearest:
    def test_example_04(self):
        table = build_linear_levels(2)
        assert quantize_nearest(0.4, 1.0, table) == 1

    def test_endpoint(self):
        table = build_linear_levels(2)
        assert quantize_nearest(2.0, 2.0, table) == 3

    def test_tie_breaks_to_smaller_code(self):
        table = build_linear_levels(2)
        assert quantize_nearest(1 / 6, 1.0, table) == 0  # midway between 0 and 1/3
        log = build_log_levels(2, 0.5)
        assert quantize_nearest(0.75, 1.0, log) == 0  # midway between 1.0 and 0.5

    def test_clamps_out_of_range(self):
        table = build_linear_levels(2)
        assert quantize_nearest(5.0, 1.0, table) == 3
        assert quantize_nearest(-5.0, 1.0, table) == 0

    @pytest.mark.parametrize("scheme", list(SchemeKind))
    @pytest.mark.parametrize("bits", [2, 3, 5, 8])
    def test_matches_argmin_oracle(self, scheme, bits):
        table = table_for(scheme, bits)
        rng = np.random.default_rng(bits * 100 + 7)
        x = rng.uniform(-1.5, 1.5, 500)
        got = quantize_nearest(x, 1.0, table)
        if scheme.is_log:
            # log tables span dozens of decades, so float64 distances to the
            # deep levels tie; assert optimality instead of index equality
            best = np.min(np.abs(x[:, None] - table.levels[None, :]), axis=1)
            chosen = np.abs(x - table.levels[got])
            np.testing.assert_array_compare(
                lambda a, b: a <= b * (1 + 1e-12) + 1e-300, chosen, best)
        else:
            oracle = np.argmin(np.abs(x[:, None] - table.levels[None, :]), axis=1)
            np.testing.assert_array_equal(got, oracle)

    def test_error_bounded_by_max_radius(self):
        for signed in (False, True):
            table = build_de_levels(4, signed=signed)
            stats = radius_stats(table)
            rng = np.random.default_rng(11)
            lo = table.levels.min()
            x = rng.uniform(lo, 1.0, 2000) * 2.5
            back = dequantize(quantize_nearest(x, 2.5, table), 2.5, table)
            assert np.max(np.abs(back - x)) <= stats.r_max * 2.5 + 1e-12


class TestStochastic:
    def test_probability_example(self):
        # x/scale = 0.25 between 0 and 1/3: upper level with probability 0.75
        table = build_linear_levels(2)
        frac = 0.25 / (1 / 3)
        assert quantize_stochastic(0.25, 1.0, table, frac - 1e-12) == 1
        assert quantize_stochastic(0.25, 1.0, table, frac + 1e-12) == 0

    def test_exact_level_deterministic(self):
        table = build_linear_levels(2)
        for u in (0.0, 0.3, 0.999999):
            assert quantize_stochastic(2 / 3, 1.0, table, u) == 2

    def test_determinism_same_draws(self):
        table = build_de_levels(4, signed=True)
        rng = np.random.default_rng(3)
        x = rng.normal(size=100)
        u = rng.uniform(0, 1, 100)
        a = quantize_stochastic(x, 2.0, table, u)
        b = quantize_stochastic(x, 2.0, table, u)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("scheme", [SchemeKind.LINEAR_UNSIGNED, SchemeKind.DE_SIGNED,
                                        SchemeKind.LOG_UNSIGNED])
    def test_unbiased_mean_recovery(self, scheme):
        table = table_for(scheme, 4)
        values = np.unique(table.levels)
        x = 0.37 * values[-3] + 0.63 * values[-2]
        scale, n = 1.7, 100_000
        rng = np.random.default_rng(99)
        codes = quantize_stochastic(np.full(n, x * scale), scale, table, rng.uniform(0, 1, n))
        mean = dequantize(codes, scale, table).mean()
        gap = (values[-2] - values[-3]) * scale
        band = 3 * np.sqrt(0.37 * 0.63) * gap / np.sqrt(n)
        assert abs(mean - x * scale) <= band

    def test_clamps_outside_range(self):
        table = build_linear_levels(2, signed=True)
        assert quantize_stochastic(-5.0, 1.0, table, 0.5) == 0
        assert quantize_stochastic(5.0, 1.0, table, 0.5) == 3


class TestLogDither:
    def test_exact_index_no_noise(self):
        assert quantize_log_dither(0.25, 1.0, 0.5, 2, 0.0) == 2

    def test_zero_maps_to_top_code(self):
        for xi in (-0.5, 0.0, 0.5):
            assert quantize_log_dither(0.0, 1.0, 0.5, 2, xi) == 3

    def test_half_index_splits_evenly(self):
        x = 0.5**1.5
        assert quantize_log_dither(x, 1.0, 0.5, 2, -0.25) == 1
        assert quantize_log_dither(x, 1.0, 0.5, 2, +0.25) == 2
        # Monte Carlo: codes {1, 2} each with probability 1/2, mean 1.5
        rng = np.random.default_rng(44)
        n = 100_000
        codes = quantize_log_dither(np.full(n, x), 1.0, 0.5, 2, rng.uniform(-0.5, 0.5, n))
        assert set(np.unique(codes)) == {1, 2}
        assert abs(codes.mean() - 1.5) <= 3 * 0.5 / np.sqrt(n)

    def test_expected_code_linear_in_log_index(self):
        rng = np.random.default_rng(12)
        base, bits, n = 0.6, 4, 200_000
        for index in (2.3, 5.5, 9.75):
            xi = rng.uniform(-0.5, 0.5, n)
            codes = quantize_log_dither(np.full(n, base**index), 1.0, base, bits, xi)
            frac = index % 1.0
            band = 3 * np.sqrt(max(frac * (1 - frac), 1e-9)) / np.sqrt(n) + 1e-6
            assert abs(codes.mean() - index) <= band

    def test_convergent_rounding_half_to_even(self):
        # indices landing exactly on .5 round to the even neighbor
        base = 0.5
        assert quantize_log_dither(base**1.5, 1.0, base, 3, 0.0) == 2
        assert quantize_log_dither(base**2.5, 1.0, base, 3, 0.0) == 2

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            quantize_log_dither(-0.1, 1.0, 0.5, 2, 0.0)

    def test_clips_above_range(self):
        assert quantize_log_dither(10.0, 1.0, 0.5, 2, 0.0) == 0


class TestDequantize:
    def test_log_code_zero_is_scale(self):
        table = build_log_levels(3, 0.3)
        assert dequantize(0, 2.0, table) == pytest.approx(2.0)

    def test_linear_top_code_is_scale(self):
        table = build_linear_levels(4)
        assert dequantize(15, 0.7, table) == pytest.approx(0.7)

    def test_zero_scale_sentinel(self):
        table = build_linear_levels(4)
        np.testing.assert_array_equal(dequantize(np.arange(16), 0.0, table), np.zeros(16))

    def test_rejects_out_of_range_code(self):
        table = build_linear_levels(2)
        with pytest.raises(ValueError):
            dequantize(4, 1.0, table)


class TestBlockOps:
    def test_all_zero_block(self):
        cfg = BlockQuantization(build_linear_levels(4), RoundingMode.NEAREST, 128)
        result = quantize_block(np.zeros(16), cfg)
        assert result.scale == 0.0
        assert np.all(result.codes == 0)
        np.testing.assert_array_equal(
            dequantize_block(result.codes, result.scale, cfg), np.zeros(16))

    def test_single_value_exact(self):
        cfg = BlockQuantization(build_linear_levels(4), RoundingMode.NEAREST, 128)
        result = quantize_block([0.625], cfg)
        np.testing.assert_allclose(
            dequantize_block(result.codes, result.scale, cfg), [0.625])

    def test_nearest_linear_8bit_error_bound(self):
        cfg = BlockQuantization(build_linear_levels(8), RoundingMode.NEAREST, 128)
        rng = np.random.default_rng(5)
        values = rng.uniform(0, 1, 128)
        result = quantize_block(values, cfg)
        back = dequantize_block(result.codes, result.scale, cfg)
        r_max = radius_stats(cfg.table).r_max
        assert np.max(np.abs(back - values)) <= r_max * result.scale + 1e-12

    def test_log_block_uses_quantile_base(self):
        cfg = BlockQuantization(build_log_levels(2, 0.9), RoundingMode.LOG_DITHER, 128,
                                p_quantile=0.1)
        rng = np.random.default_rng(6)
        values = np.abs(rng.normal(size=64))
        x_p = tensor_quantile(values, cfg.p_quantile)
        result = quantize_block(values, cfg, rng, x_p=x_p)
        assert result.base == pytest.approx(compute_log_base(x_p, result.scale, 2))
        back = dequantize_block(result.codes, result.scale, cfg, base=result.base)
        assert back.shape == values.shape

    def test_log_block_requires_quantile(self):
        cfg = BlockQuantization(build_log_levels(2, 0.5), RoundingMode.LOG_DITHER, 128)
        with pytest.raises(ValueError):
            quantize_block([0.5], cfg, np.random.default_rng(0))

    def test_rejects_oversized_block(self):
        cfg = BlockQuantization(build_linear_levels(2), RoundingMode.NEAREST, 4)
        with pytest.raises(ValueError):
            quantize_block(np.ones(5), cfg)

    def test_stochastic_requires_rng(self):
        cfg = BlockQuantization(build_linear_levels(2), RoundingMode.STOCHASTIC, 8)
        with pytest.raises(ValueError):
            quantize_block(np.ones(4) * 0.3, cfg)


class TestConfigValidation:
    def test_log_dither_requires_log_table(self):
        with pytest.raises(ValueError):
            BlockQuantization(build_linear_levels(2), RoundingMode.LOG_DITHER, 128)

    def test_block_size_positive(self):
        with pytest.raises(ValueError):
            BlockQuantization(build_linear_levels(2), RoundingMode.NEAREST, 0)

    def test_log_quantile_range(self):
        with pytest.raises(ValueError):
            BlockQuantization(build_log_levels(2, 0.5), RoundingMode.NEAREST, 128,
                              p_quantile=1.5)


@settings(max_examples=60, deadline=None)
@given(
    bits=st.sampled_from([2, 3, 4, 8]),
    signed=st.booleans(),
    x=st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
    scale=st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
)
def test_nearest_code_always_in_range(bits, signed, x, scale):
    table = build_linear_levels(bits, signed=signed)
    code = quantize_nearest(x, scale, table)
    assert 0 <= code < 2**bits
