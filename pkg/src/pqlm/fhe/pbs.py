"""Programmable bootstrapping over the negacyclic ring.

An arbitrary table over the full widened plaintext space cannot be read
out of a single blind rotation: one rotation only realizes functions
with g(m + p'/2) = -g(m). Each bootstrap therefore chains two rotations:

1. **Remap rotation.** A fixed staircase test vector sends every noisy
   phase window to a canonical *code* for its message. The staircase is
   stored shifted down by q/4 so it satisfies the ring's sign rule, and
   the q/4 is added back as a clear constant afterwards. Codes are odd
   multiples of q/(4p'), all in the lower half-circle, and the remap
   output noise is provably below q/(4N).
2. **Eval rotation.** Because every code lands on an exact rotation
   position (ring_dim is a multiple of 2p') and the surviving noise is
   below half a position, the second rotation reads table entries from
   those positions with no further rounding error at all.

Mask coefficients stay on the q/(2N) grid throughout, so the only
rounding in either rotation is on the body. One call to ``pbs`` counts
as one bootstrap; an encrypted multiply costs exactly two.
"""
from __future__ import annotations

import threading

import numpy as np

from .keys import EvalKey, KeyMaterial, apply_keyswitch
from .ledger import NoiseEstimate
from .lut import LookupTable
from .lwe import LweCiphertext, add_ct, sub_ct
from .params import MASK64, Q, CryptoParams
from .poly import NegacyclicEngine, decompose_u64, negacyclic_shift, split_limbs


class PbsCounter:
    """Thread-safe bootstrap counter; multiplies report their two calls."""

    def __init__(self) -> None:
        self._value = 0
        self._lock = threading.Lock()

    def add(self, k: int = 1) -> None:
        with self._lock:
            self._value += k

    @property
    def value(self) -> int:
        with self._lock:
            return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0


def _signed_value(v: int, bits: int) -> int:
    return v - (1 << bits) if v >= 1 << (bits - 1) else v


def make_mul_tables(sum_bits: int, signed: bool, modulus: int) -> tuple[LookupTable, LookupTable]:
    """Quarter-square tables for the two bootstraps of an encrypted multiply.

    The difference table always decodes its input as signed (a - b wraps
    below zero even for non-negative operands). The sum table decodes as
    signed only when the operands themselves are centered codes.
    """
    if signed:
        plus = LookupTable.from_function(
            lambda v: _signed_value(v, sum_bits) ** 2 // 4, sum_bits, modulus
        )
    else:
        plus = LookupTable.from_function(lambda v: v * v // 4, sum_bits, modulus)
    minus = LookupTable.from_function(
        lambda v: _signed_value(v, sum_bits) ** 2 // 4, sum_bits, modulus
    )
    return plus, minus


class PbsBackendBase:
    """Shared bootstrap-derived operations; subclasses provide ``pbs``."""

    params: CryptoParams
    counter: PbsCounter

    def pbs(self, ct: LweCiphertext, lut: LookupTable) -> LweCiphertext:
        raise NotImplementedError

    def refresh(self, ct: LweCiphertext) -> LweCiphertext:
        """Identity bootstrap: same value, noise reset to the bootstrap floor."""
        return self.pbs(ct, LookupTable.identity(ct.plaintext_space))

    def mul_ct(
        self, c1: LweCiphertext, c2: LweCiphertext, signed: bool = False
    ) -> LweCiphertext:
        """Encrypted x encrypted multiply via the quarter-square identity.

        Exactly two bootstraps: one on the operands' sum, one on their
        difference. With ``signed=False`` the operands are plain codes and
        their sum must stay inside the widened space; with ``signed=True``
        both operands are centered codes and the product must fit one too.
        """
        p = self.params
        sum_bits = min(max(c1.plaintext_space, c2.plaintext_space) + 1, p.plaintext_space_bits)
        plus_lut, minus_lut = make_mul_tables(sum_bits, signed, p.plaintext_space_size)
        s = add_ct(c1, c2)
        d = sub_ct(c1, c2)
        out = sub_ct(self.pbs(s, plus_lut), self.pbs(d, minus_lut))
        if signed:
            out.plaintext_space = p.plaintext_space_bits
        else:
            out.plaintext_space = min(
                c1.plaintext_space + c2.plaintext_space, p.plaintext_space_bits
            )
        return out

    def _check_bootstrappable(self, ct: LweCiphertext, lut: LookupTable) -> None:
        p = self.params
        if len(lut.entries) != 1 << ct.plaintext_space:
            raise ValueError(
                f"table indexes {lut.input_bits} bits but ciphertext carries "
                f"{ct.plaintext_space}"
            )
        if max(lut.entries) >= p.plaintext_space_size:
            raise ValueError("table entries exceed the widened plaintext space")
        if not ct.noise.bootstrappable(p):
            raise ValueError(
                "noise budget exceeded before bootstrap; refresh earlier in the circuit"
            )


class BlindRotateBackend(PbsBackendBase):
    """The genuine evaluator: blind rotations driven by the evaluation key."""

    def __init__(
        self,
        eval_key: EvalKey,
        counter: PbsCounter | None = None,
        precompute_limit_bytes: int = 128 << 20,
    ) -> None:
        p = eval_key.params
        if eval_key.params_fingerprint != p.fingerprint():
            raise ValueError("evaluation key fingerprint does not match parameters")
        self.params = p
        self.eval_key = eval_key
        self.counter = counter if counter is not None else PbsCounter()
        self.engine = NegacyclicEngine(p.ring_dim)
        self._remap_vec: np.ndarray | None = None
        self._rows_fft: np.ndarray | None = None
        n, levels, big_n = p.lwe_dim, p.decomp_levels, p.ring_dim
        fft_bytes = n * 8 * (2 * levels) * 2 * big_n * 16
        self._precompute_rows = fft_bytes <= precompute_limit_bytes

    # -- code geometry ---------------------------------------------------

    def _code(self, m: int) -> int:
        """Canonical phase for message m after the remap rotation."""
        p = self.params
        half = p.plaintext_space_size // 2
        base = (2 * (m % half) + 1) * (Q // (4 * p.plaintext_space_size))
        return base if m < half else (Q // 2 - base) % Q

    def _position(self, m: int) -> int:
        """Exact rotation position of code(m); integer because N % 2p' == 0."""
        return (self._code(m) * 2 * self.params.ring_dim) // Q

    def _remap_testvec(self) -> np.ndarray:
        if self._remap_vec is None:
            p = self.params
            big_n, space = p.ring_dim, p.plaintext_space_size
            win = 2 * big_n // space
            j = np.arange(big_n)
            msgs = ((j + win // 2) // win) % space
            codes = np.array([self._code(int(m)) for m in range(space)], dtype=np.uint64)
            shift = np.uint64(Q // 4)
            self._remap_vec = codes[msgs] - shift
        return self._remap_vec

    def _eval_testvec(self, lut: LookupTable, input_space: int) -> np.ndarray:
        key = (self.params.fingerprint(), input_space)
        cached = lut._tv_cache.get(key)
        if cached is not None:
            return cached
        p = self.params
        vec = np.zeros(p.ring_dim, dtype=np.uint64)
        in_mask = (1 << input_space) - 1
        for m in range(p.plaintext_space_size):
            g = lut.entries[m & in_mask] % p.plaintext_space_size
            vec[self._position(m)] = (p.delta * g) & MASK64
        lut._tv_cache[key] = vec
        return vec

    # -- ring machinery ---------------------------------------------------

    def _bsk_rows_fft(self, i: int) -> np.ndarray:
        """Spectra of secret-bit i's gadget rows, split into 8-bit limbs."""
        p = self.params
        if self._precompute_rows:
            if self._rows_fft is None:
                rows = self.eval_key.bsk.reshape(
                    p.lwe_dim, 2 * p.decomp_levels, 2, p.ring_dim
                )
                self._rows_fft = self.engine.fwd(split_limbs(rows, 8, 8))
            return self._rows_fft[:, i]
        rows = self.eval_key.bsk[i].reshape(2 * p.decomp_levels, 2, p.ring_dim)
        return self.engine.fwd(split_limbs(rows, 8, 8))

    def _external_product(self, i: int, glwe: np.ndarray) -> np.ndarray:
        """Gadget product of secret bit i with a GLWE pair [2, N]."""
        p = self.params
        digits = decompose_u64(glwe, p.decomp_base_bits, p.decomp_levels)  # [l, 2, N]
        flat = digits.transpose(1, 0, 2).reshape(2 * p.decomp_levels, p.ring_dim)
        digit_fft = self.engine.fwd(flat.astype(np.float64))
        spec = np.einsum("rn,lrcn->lcn", digit_fft, self._bsk_rows_fft(i))
        ints = self.engine.inv_to_int(spec)
        out = np.zeros((2, p.ring_dim), dtype=np.uint64)
        for limb in range(ints.shape[0]):
            out += ints[limb].astype(np.int64).astype(np.uint64) << np.uint64(8 * limb)
        return out

    def blind_rotate(self, a: np.ndarray, b: int, testvec: np.ndarray) -> np.ndarray:
        """Rotate testvec by the (mod-switched) phase under the ring key."""
        p = self.params
        grid = p.mask_grid
        if int((a % np.uint64(grid) != 0).sum()):
            raise ValueError("mask left the rotation grid; cannot mod-switch exactly")
        two_n = 2 * p.ring_dim
        pos_b = ((b + grid // 2) // grid) % two_n
        acc = np.zeros((2, p.ring_dim), dtype=np.uint64)
        acc[1] = negacyclic_shift(testvec, -pos_b)
        positions = (a // np.uint64(grid)).astype(np.int64)
        for i, pos in enumerate(positions):
            pos = int(pos) % two_n
            if pos == 0:
                continue
            diff = negacyclic_shift(acc, pos)
            diff -= acc
            acc += self._external_product(i, diff)
        return acc

    def _extract_and_switch(self, acc: np.ndarray) -> tuple[np.ndarray, int]:
        """Slot-0 LWE sample under the ring key, switched back to the LWE key."""
        mask_poly, body_poly = acc[0], acc[1]
        a_ext = np.concatenate([mask_poly[:1], -mask_poly[1:][::-1]])
        b_ext = int(body_poly[0])
        return apply_keyswitch(a_ext, b_ext, self.eval_key.extract_ksk)

    # -- the bootstrap ----------------------------------------------------

    def pbs(self, ct: LweCiphertext, lut: LookupTable) -> LweCiphertext:
        p = self.params
        self._check_bootstrappable(ct, lut)

        acc = self.blind_rotate(ct.a, ct.b, self._remap_testvec())
        a_mid, b_mid = self._extract_and_switch(acc)
        b_mid = (b_mid + Q // 4) & MASK64  # undo the staircase's sign-rule shift

        acc = self.blind_rotate(a_mid, b_mid, self._eval_testvec(lut, ct.plaintext_space))
        a_out, b_out = self._extract_and_switch(acc)

        self.counter.add(1)
        return LweCiphertext(
            a=a_out,
            b=b_out,
            plaintext_space=max(lut.output_bits, p.plaintext_bits),
            noise=NoiseEstimate.after_pbs(p),
            params=p,
        )


class EscrowBackend(PbsBackendBase):
    """Decrypt-evaluate-reencrypt stand-in; requires the client secrets.

    Construction is gated on ``KeyMaterial``, so a party holding only an
    evaluation key structurally cannot instantiate it. Used as the
    reference oracle in tests and as the fast path for simulate-style
    runs that still want real ciphertext plumbing.
    """

    def __init__(self, key_material: KeyMaterial, counter: PbsCounter | None = None) -> None:
        if not isinstance(key_material, KeyMaterial):
            raise TypeError("escrow evaluation requires client key material")
        self.params = key_material.params
        self.km = key_material
        self.counter = counter if counter is not None else PbsCounter()

    def pbs(self, ct: LweCiphertext, lut: LookupTable) -> LweCiphertext:
        p = self.params
        self._check_bootstrappable(ct, lut)
        m = self.km.decrypt(ct)
        g = lut.entries[m & ((1 << ct.plaintext_space) - 1)] % p.plaintext_space_size
        space = max(lut.output_bits, p.plaintext_bits)
        out = self.km.encrypt(g % (1 << space), plaintext_space=space)
        out.noise = NoiseEstimate.after_pbs(p)
        self.counter.add(1)
        return out
