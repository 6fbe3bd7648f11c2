"""Affine quantization: calibration, code maps, dual tensors, tables."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqlm.fhe import LookupTable
from pqlm.quant import (
    CalibrationError,
    DualTensor,
    QuantParams,
    build_lut,
    calibrate,
    dequantize,
    merge_params,
    quantize,
)

SPACE = 5


class TestCalibrate:
    def test_reference_example(self):
        q = calibrate([-1.0, 0.5, 1.0], n_bits=2)
        # independent recomputation: scale = (1-(-1))/(2^2-1), zp = round(1/scale)
        assert q.scale == pytest.approx(2.0 / 3.0, rel=1e-15)
        assert q.zero_point == 2
        assert (q.observed_min, q.observed_max) == (-1.0, 1.0)
        assert not q.degenerate

    def test_degenerate_constant_stream(self):
        q = calibrate([0.0, 0.0, 0.0], n_bits=3)
        assert q.degenerate
        assert q.scale == 1.0 and q.zero_point == 0

    def test_degenerate_nonzero_constant_roundtrips(self):
        q = calibrate([2.0, 2.0], n_bits=2)
        assert q.degenerate
        assert dequantize(quantize(2.0, q), q) == 2.0

    def test_order_invariance(self):
        samples = [0.3, -1.7, 2.2, 0.0, 1.1]
        assert calibrate(samples, 4) == calibrate(list(reversed(samples)), 4)
        assert calibrate(samples, 4) == calibrate(sorted(samples), 4)

    def test_empty_stream_error(self):
        with pytest.raises(CalibrationError, match="empty"):
            calibrate([], 2)

    def test_non_finite_error(self):
        with pytest.raises(CalibrationError, match="finite"):
            calibrate([1.0, float("nan")], 2)
        with pytest.raises(CalibrationError, match="finite"):
            calibrate([1.0, float("inf")], 2)

    def test_merge_is_min_max_union(self):
        a = calibrate([-1.0, 0.5], 3)
        b = calibrate([0.0, 4.0], 3)
        merged = merge_params(a, b)
        assert (merged.observed_min, merged.observed_max) == (-1.0, 4.0)
        assert merged == calibrate([-1.0, 0.5, 0.0, 4.0], 3)

    def test_merge_rejects_mixed_bit_widths(self):
        with pytest.raises(ValueError, match="bit widths"):
            merge_params(calibrate([0, 1], 2), calibrate([0, 1], 3))

    def test_quant_params_validation(self):
        with pytest.raises(ValueError, match="n_bits"):
            QuantParams(0, 1.0, 0, 0.0, 1.0)
        with pytest.raises(ValueError, match="scale"):
            QuantParams(2, 0.0, 0, 0.0, 1.0)

    def test_centered_interval(self):
        q = calibrate([-1.0, 0.5, 1.0], n_bits=2)
        assert q.n_levels == 3
        assert q.centered_interval() == (-2, 1)


class TestQuantizeDequantize:
    def test_zero_maps_to_zero_point(self):
        q = calibrate([-1.0, 0.5, 1.0], 2)
        assert int(quantize(0.0, q)) == q.zero_point
        assert float(dequantize(q.zero_point, q)) == 0.0

    def test_endpoints_hit_code_boundaries(self):
        q = calibrate([-2.0, 6.0], 4)
        assert int(quantize(q.observed_min, q)) == 0
        assert int(quantize(q.observed_max, q)) == q.n_levels

    def test_out_of_range_clamps(self):
        q = calibrate([-1.0, 1.0], 2)
        assert int(quantize(-50.0, q)) == 0
        assert int(quantize(50.0, q)) == q.n_levels

    def test_ties_round_to_even(self):
        q = QuantParams(3, 1.0, 0, 0.0, 7.0)
        assert int(quantize(0.5, q)) == 0
        assert int(quantize(1.5, q)) == 2
        assert int(quantize(2.5, q)) == 2
        assert int(quantize(3.5, q)) == 4

    def test_roundtrip_error_bounded_by_half_step(self):
        q = calibrate([-3.0, 5.0], 4)
        rng = np.random.default_rng(0)
        xs = rng.uniform(-3.0, 5.0, size=10_000)
        err = np.abs(dequantize(quantize(xs, q), q) - xs)
        assert float(err.max()) <= q.scale / 2 + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_quantize_is_monotone(self, x, y):
        q = calibrate([-4.0, 4.0], 3)
        if x <= y:
            assert int(quantize(x, q)) <= int(quantize(y, q))
        else:
            assert int(quantize(x, q)) >= int(quantize(y, q))

    def test_dequantize_range_error(self):
        q = calibrate([0.0, 1.0], 2)
        with pytest.raises(ValueError, match="outside"):
            dequantize(np.array([4]), q)
        with pytest.raises(ValueError, match="outside"):
            dequantize(np.array([-1]), q)

    def test_dequantize_is_affine_in_the_code(self):
        q = calibrate([-1.5, 2.5], 3)
        for v in range(q.n_levels + 1):
            assert float(dequantize(v, q)) == pytest.approx(
                (v - q.zero_point) * q.scale, rel=1e-15)


class TestDualTensor:
    def test_from_float_roundtrip_bound(self):
        q = calibrate([-2.0, 2.0], 4)
        x = np.linspace(-2.0, 2.0, 37)
        dt = DualTensor.from_float(x, q)
        assert dt.shape == x.shape
        assert dt.requantized_error() <= q.scale / 2 + 1e-12

    def test_from_int_is_exact(self):
        q = calibrate([-2.0, 2.0], 3)
        v = np.arange(q.n_levels + 1)
        dt = DualTensor.from_int(v, q)
        assert dt.requantized_error() == 0.0

    def test_shape_mismatch_rejected(self):
        q = calibrate([0.0, 1.0], 2)
        with pytest.raises(ValueError, match="shape"):
            DualTensor(np.zeros(3), np.zeros(4, dtype=np.int64), q)


class TestBuildLut:
    def test_identity_table_is_identity_on_all_codes(self):
        q = calibrate([-8.0, 8.0], SPACE)
        lut = build_lut(lambda x: x, q, q, SPACE)
        assert lut.entries == tuple(range(1 << SPACE))

    def test_exp_table_is_monotone(self):
        in_q = calibrate([-2.0, 2.0], 3)
        out_q = calibrate([0.0, float(np.exp(2.0)), 8.0], 4)
        lut = build_lut(math.exp, in_q, out_q, SPACE)
        entries = np.array(lut.entries)
        assert (np.diff(entries) >= 0).all()

    def test_silu_zero_lands_on_output_zero_point(self):
        def silu(x: float) -> float:
            return x / (1.0 + math.exp(-x))

        in_q = calibrate([-3.0, 3.0], 4)
        out_q = calibrate([-1.0, 3.0], 4)
        lut = build_lut(silu, in_q, out_q, SPACE)
        assert lut.entries[in_q.zero_point] == out_q.zero_point

    def test_non_finite_output_rejected(self):
        q = calibrate([0.0, 1.0], 2)
        with pytest.raises(ValueError, match="non-finite"):
            build_lut(lambda x: math.inf, q, q, SPACE)

    def test_entries_fit_output_code_range(self):
        in_q = calibrate([-5.0, 5.0], SPACE)
        out_q = calibrate([-1.0, 1.0], 3)
        lut = build_lut(math.tanh, in_q, out_q, SPACE)
        assert min(lut.entries) >= 0
        assert max(lut.entries) <= out_q.n_levels

    def test_table_matches_bootstrapped_evaluation(self, km, escrow):
        in_q = calibrate([-2.0, 2.0], SPACE)
        out_q = calibrate([-1.0, 1.0], SPACE)
        lut = build_lut(math.tanh, in_q, out_q, SPACE)
        for code in range(1 << SPACE):
            ct = km.encrypt(code, plaintext_space=SPACE)
            assert km.decrypt(escrow.pbs(ct, lut)) == lut.entries[code]

    def test_identity_lut_equals_library_identity(self):
        q = calibrate([-8.0, 8.0], SPACE)
        assert build_lut(lambda x: x, q, q, SPACE) == LookupTable.identity(SPACE)
