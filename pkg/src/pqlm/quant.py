"""Affine integer quantization: calibration, dual tensors, table building.

One per-tensor affine code space: ``code = round(x/scale) + zero_point``
clamped to [0, 2^n_bits). Rounding is ties-to-even everywhere. Circuit
internals prefer the *centered* view ``code - zero_point`` so that clear
weights act on small signed integers; the conversion is pure bookkeeping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .fhe.lut import LookupTable


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    n_bits: int
    scale: float
    zero_point: int
    observed_min: float
    observed_max: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.n_bits < 1:
            raise ValueError("n_bits must be at least 1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def n_levels(self) -> int:
        return (1 << self.n_bits) - 1

    def centered_interval(self) -> tuple[int, int]:
        """Signed code range after subtracting the zero point."""
        return -self.zero_point, self.n_levels - self.zero_point


def calibrate(samples: Iterable[float] | np.ndarray, n_bits: int) -> QuantParams:
    """Min/max calibration over a sample stream (order-invariant)."""
    arr = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=np.float64)
    if arr.size == 0:
        raise CalibrationError("cannot calibrate from an empty sample stream")
    if not np.isfinite(arr).all():
        raise CalibrationError("calibration samples must be finite")
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return QuantParams(n_bits, 1.0, 0, lo, hi, degenerate=True)
    scale = (hi - lo) / ((1 << n_bits) - 1)
    zero_point = int(np.clip(np.round(-lo / scale), 0, (1 << n_bits) - 1))
    return QuantParams(n_bits, scale, zero_point, lo, hi)


def merge_params(a: QuantParams, b: QuantParams) -> QuantParams:
    """Merge two calibrations of the same node (min/max union)."""
    if a.n_bits != b.n_bits:
        raise ValueError("cannot merge calibrations with different bit widths")
    return calibrate(
        np.array([a.observed_min, a.observed_max, b.observed_min, b.observed_max]),
        a.n_bits,
    )


def quantize(x: np.ndarray | float, q: QuantParams) -> np.ndarray:
    """Total function: out-of-range values clamp to the code boundary."""
    codes = np.round(np.asarray(x, dtype=np.float64) / q.scale) + q.zero_point
    return np.clip(codes, 0, q.n_levels).astype(np.int64)


def dequantize(v: np.ndarray | int, q: QuantParams) -> np.ndarray:
    arr = np.asarray(v, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > q.n_levels):
        raise ValueError(f"code outside [0, {q.n_levels}] for {q.n_bits}-bit params")
    return (arr.astype(np.float64) - q.zero_point) * q.scale


@dataclass(frozen=True)
class DualTensor:
    """Paired float/integer views of one tensor under shared QuantParams."""

    float_values: np.ndarray
    int_values: np.ndarray
    qparams: QuantParams

    def __post_init__(self) -> None:
        if self.float_values.shape != self.int_values.shape:
            raise ValueError("float and integer views must share a shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.float_values.shape

    @classmethod
    def from_float(cls, x: np.ndarray, q: QuantParams) -> "DualTensor":
        x = np.asarray(x, dtype=np.float64)
        return cls(float_values=x, int_values=quantize(x, q), qparams=q)

    @classmethod
    def from_int(cls, v: np.ndarray, q: QuantParams) -> "DualTensor":
        v = np.asarray(v, dtype=np.int64)
        return cls(float_values=dequantize(v, q), int_values=v, qparams=q)

    def requantized_error(self) -> float:
        """Max |float - dequantized(int)| over the tensor."""
        return float(np.max(np.abs(self.float_values - dequantize(self.int_values, self.qparams))))


def build_lut(
    f: Callable[[float], float],
    in_q: QuantParams,
    out_q: QuantParams,
    space_bits: int,
) -> LookupTable:
    """Tabulate quantize_out(f(dequantize_in(v))) for every representable v.

    ``space_bits`` is the plaintext space of the ciphertext the table will
    be applied to; codes beyond in_q's nominal range still get entries
    (they are unreachable in correct flows but must exist).
    """
    entries = []
    for v in range(1 << space_bits):
        x = (v - in_q.zero_point) * in_q.scale
        y = f(x)
        if not math.isfinite(y):
            raise ValueError(
                f"function produced non-finite value at code {v} (x={x}); pre-clamp it"
            )
        entries.append(int(quantize(y, out_q)))
    return LookupTable(entries=tuple(entries), input_bits=space_bits)
