"""LWE ciphertexts and the noise-tracked linear operations on them.

A ciphertext is (a, b) with b = <a, sk> + e + delta*m over wrapping
64-bit arithmetic. Mask coefficients live on the q/(2N) grid (see
CryptoParams.mask_grid). Linear ops never touch a secret key.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ledger import NoiseEstimate
from .params import MASK64, Q, CryptoParams

SERIAL_VERSION = 1


@dataclass
class LweCiphertext:
    a: np.ndarray  # uint64 [n]
    b: int  # masked to 64 bits
    plaintext_space: int  # effective message bits, grows with products
    noise: NoiseEstimate
    params: CryptoParams

    def copy(self) -> "LweCiphertext":
        return LweCiphertext(self.a.copy(), self.b, self.plaintext_space, self.noise, self.params)


def _check_compat(c1: LweCiphertext, c2: LweCiphertext) -> None:
    if c1.params is not c2.params and c1.params != c2.params:
        raise ValueError("ciphertexts use different parameter sets")


def trivial_encrypt(m: int, params: CryptoParams, plaintext_space: int | None = None) -> LweCiphertext:
    """Noiseless, maskless embedding of a clear constant."""
    space = params.plaintext_bits if plaintext_space is None else plaintext_space
    if space > params.plaintext_space_bits:
        raise ValueError("plaintext_space exceeds the widened space")
    body = (params.delta * (m % params.plaintext_space_size)) & MASK64
    return LweCiphertext(
        a=np.zeros(params.lwe_dim, dtype=np.uint64),
        b=body,
        plaintext_space=space,
        noise=NoiseEstimate.trivial(),
        params=params,
    )


def add_ct(c1: LweCiphertext, c2: LweCiphertext) -> LweCiphertext:
    """Homomorphic add; message wraps mod 2^plaintext_space."""
    _check_compat(c1, c2)
    space = min(max(c1.plaintext_space, c2.plaintext_space) + 1, c1.params.plaintext_space_bits)
    return LweCiphertext(
        a=c1.a + c2.a,
        b=(c1.b + c2.b) & MASK64,
        plaintext_space=space,
        noise=c1.noise.add(c2.noise),
        params=c1.params,
    )


def sub_ct(c1: LweCiphertext, c2: LweCiphertext) -> LweCiphertext:
    _check_compat(c1, c2)
    space = min(max(c1.plaintext_space, c2.plaintext_space) + 1, c1.params.plaintext_space_bits)
    return LweCiphertext(
        a=c1.a - c2.a,
        b=(c1.b - c2.b) & MASK64,
        plaintext_space=space,
        noise=c1.noise.add(c2.noise),
        params=c1.params,
    )


def mul_pt(c: LweCiphertext, k: int) -> LweCiphertext:
    """Multiply by a small clear integer (either sign); noise scales by |k|."""
    ku = k & MASK64
    grow = max(abs(k), 1).bit_length() - (1 if abs(k) and abs(k) & (abs(k) - 1) == 0 else 0)
    space = min(c.plaintext_space + max(grow, 0), c.params.plaintext_space_bits)
    return LweCiphertext(
        a=c.a * np.uint64(ku),
        b=(c.b * ku) & MASK64,
        plaintext_space=space if k != 0 else c.params.plaintext_bits,
        noise=c.noise.scale(k),
        params=c.params,
    )


def add_clear(c: LweCiphertext, m: int) -> LweCiphertext:
    """Add a clear constant without touching the mask or the noise."""
    body = (c.b + c.params.delta * (m % c.params.plaintext_space_size)) & MASK64
    return LweCiphertext(c.a.copy(), body, c.plaintext_space, c.noise, c.params)


# -- serialization -----------------------------------------------------


def ciphertext_byte_size(params: CryptoParams) -> int:
    return 4 + 2 + 1 + 1 + 8 * (params.lwe_dim + 1) + 8


def serialize_ciphertext(ct: LweCiphertext) -> bytes:
    head = struct.pack(
        "<IHBB", SERIAL_VERSION, ct.params.lwe_dim, ct.params.log2_q, ct.plaintext_space
    )
    residues = np.ascontiguousarray(ct.a, dtype="<u8").tobytes() + struct.pack("<Q", ct.b)
    tail = struct.pack("<d", ct.noise.magnitude)
    return head + residues + tail


def deserialize_ciphertext(data: bytes, params: CryptoParams) -> LweCiphertext:
    if len(data) < 8:
        raise ValueError("ciphertext blob truncated")
    version, n, log2q, space = struct.unpack_from("<IHBB", data, 0)
    if version != SERIAL_VERSION:
        raise ValueError(f"unsupported ciphertext version {version}")
    if n != params.lwe_dim or log2q != params.log2_q:
        raise ValueError("ciphertext does not match the active parameter set")
    expected = ciphertext_byte_size(params)
    if len(data) != expected:
        raise ValueError(f"ciphertext blob has {len(data)} bytes, expected {expected}")
    off = 8
    a = np.frombuffer(data, dtype="<u8", count=n, offset=off).astype(np.uint64)
    off += 8 * n
    (b,) = struct.unpack_from("<Q", data, off)
    off += 8
    (mag,) = struct.unpack_from("<d", data, off)
    return LweCiphertext(a, b, space, NoiseEstimate(mag), params)
