"""Exact negacyclic polynomial arithmetic over Z_{2^64}[X]/(X^N + 1).

Products are computed with float64 FFTs made exact by splitting operands
into small limbs so every convolution coefficient stays far below 2^53.
A runtime integrality check guards the reconstruction; if it ever fires
the parameters were mis-sized, not the data.
"""
from __future__ import annotations

import numpy as np

from .params import MASK64

_INTEGRALITY_TOL = 0.25


def negacyclic_shift(arr: np.ndarray, k: int) -> np.ndarray:
    """Multiply by X^k in the negacyclic ring; `arr` is [..., N] uint64."""
    n = arr.shape[-1]
    k = k % (2 * n)
    sign_flip = False
    if k >= n:
        k -= n
        sign_flip = True
    if k == 0:
        out = arr.copy()
    else:
        out = np.roll(arr, k, axis=-1)
        out[..., :k] = -out[..., :k]
    if sign_flip:
        out = -out
    return out


def decompose_u64(arr: np.ndarray, base_bits: int, levels: int) -> np.ndarray:
    """Little-endian base-2^base_bits digits; exact (levels*base_bits = 64).

    Returns uint64 [levels, ...] with digit values below 2^base_bits.
    """
    shift = np.uint64(base_bits)
    mask = np.uint64((1 << base_bits) - 1)
    out = np.empty((levels,) + arr.shape, dtype=np.uint64)
    cur = arr
    for j in range(levels):
        out[j] = cur & mask
        cur = cur >> shift
    return out


def split_limbs(arr: np.ndarray, limb_bits: int, n_limbs: int) -> np.ndarray:
    """Split uint64 [..., N] into float64 limbs [n_limbs, ..., N]."""
    shift = np.uint64(limb_bits)
    mask = np.uint64((1 << limb_bits) - 1)
    out = np.empty((n_limbs,) + arr.shape, dtype=np.float64)
    cur = arr
    for j in range(n_limbs):
        out[j] = (cur & mask).astype(np.float64)
        cur = cur >> shift
    return out


def combine_limbs(ints: np.ndarray, limb_bits: int) -> np.ndarray:
    """Inverse of split_limbs for signed integer limb values (wraps mod 2^64)."""
    n_limbs = ints.shape[0]
    out = np.zeros(ints.shape[1:], dtype=np.uint64)
    for j in range(n_limbs):
        limb = ints[j].astype(np.int64).astype(np.uint64)
        out += limb << np.uint64(limb_bits * j)
    return out


class NegacyclicEngine:
    """FFT plan for one ring dimension, shared by bootstrap and keygen."""

    def __init__(self, ring_dim: int):
        self.n = ring_dim
        j = np.arange(ring_dim)
        self.twist = np.exp(1j * np.pi * j / ring_dim)
        self.untwist = np.conj(self.twist)

    def fwd(self, coeffs: np.ndarray) -> np.ndarray:
        """Forward transform of float64 coefficient arrays [..., N]."""
        return np.fft.fft(coeffs * self.twist, axis=-1)

    def inv_to_int(self, spec: np.ndarray) -> np.ndarray:
        """Inverse transform, asserting near-integrality, returns float64 ints."""
        vals = (np.fft.ifft(spec, axis=-1) * self.untwist).real
        ints = np.rint(vals)
        err = np.max(np.abs(vals - ints)) if vals.size else 0.0
        if err > _INTEGRALITY_TOL:
            raise RuntimeError(
                f"FFT product lost integrality (err={err:.3g}); "
                "limb/digit widths are mis-sized for this ring dimension"
            )
        return ints

    def mul_small(self, a_u64: np.ndarray, b_small: np.ndarray) -> np.ndarray:
        """Exact negacyclic product of full-width a with small-integer b.

        b must have entries with |b| <= 2^16 so 8-bit limbs of `a` keep the
        convolution inside the exact float64 window.
        """
        limbs = split_limbs(a_u64, 8, 8)
        bf = self.fwd(b_small.astype(np.float64))
        spec = self.fwd(limbs) * bf
        ints = self.inv_to_int(spec)
        return combine_limbs(ints, 8)
