"""Crypto parameter set for the toy LWE/GLWE scheme.

Everything here is deliberately toy-sized and NOT secure. The parameter
object is immutable and carries every derived constant the rest of the
stack needs: the scaling factor delta, the widened plaintext space, noise
budgets, and gadget-decomposition settings for the bootstrap and
key-switch keys.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

Q_BITS = 64
Q = 1 << Q_BITS
MASK64 = Q - 1


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class CryptoParams:
    """Parameters for LWE ciphertexts and the GLWE bootstrap accumulator.

    lwe_dim:        LWE mask length n.
    ring_dim:       degree N of the negacyclic ring Z_q[X]/(X^N + 1).
    log2_q:         ciphertext modulus bits; fixed at 64 (wrapping u64).
    plaintext_bits: payload bits per ciphertext.
    carry_bits:     headroom bits so sums/products stay decodable.
    fresh_noise_mag: magnitude bound E0 on fresh encryption noise.
    key_noise_mag:  magnitude bound on bootstrap/key-switch key noise.
    rng_seed:       seed for all randomness derived from this key material.
    """

    lwe_dim: int = 512
    ring_dim: int = 1024
    log2_q: int = 64
    plaintext_bits: int = 2
    carry_bits: int = 3
    fresh_noise_mag: int = 1 << 42
    key_noise_mag: int = 4
    rng_seed: int = 1337
    decomp_base_bits: int = 16
    decomp_levels: int = 4

    def __post_init__(self):
        if self.log2_q != Q_BITS:
            raise ValueError("only the wrapping 64-bit modulus is supported")
        if self.log2_q <= self.plaintext_bits + self.carry_bits + 2:
            raise ValueError(
                "log2_q must exceed plaintext_bits + carry_bits + 2 "
                f"(got {self.log2_q} vs {self.plaintext_bits}+{self.carry_bits}+2)"
            )
        if not _is_pow2(self.ring_dim):
            raise ValueError("ring_dim must be a power of two")
        if self.lwe_dim < 1:
            raise ValueError("lwe_dim must be positive")
        if self.ring_dim % (2 * self.plaintext_space_size) != 0:
            raise ValueError(
                "ring_dim must be a multiple of twice the widened plaintext "
                "space so remap codes land on exact rotation positions"
            )
        if self.decomp_base_bits * self.decomp_levels != Q_BITS:
            raise ValueError("gadget decomposition must cover all 64 bits")
        if self.delta * self.plaintext_space_size > Q:
            raise ValueError("delta * plaintext space exceeds the modulus")
        if self.fresh_noise_mag >= self.delta // 2:
            raise ValueError("fresh noise must fit the decryption budget")
        if self.pbs_output_noise_bound() > self.pbs_noise_mag:
            raise ValueError(
                "key noise too large: worst-case bootstrap output noise "
                f"{self.pbs_output_noise_bound()} exceeds E_pbs {self.pbs_noise_mag}"
            )
        if self.pbs_output_noise_bound() >= Q // (4 * self.ring_dim):
            raise ValueError(
                "worst-case rotation output noise breaks remap code alignment"
            )

    # -- derived plaintext layout ------------------------------------

    @property
    def plaintext_space_bits(self) -> int:
        return self.plaintext_bits + self.carry_bits

    @property
    def plaintext_space_size(self) -> int:
        """Widened message modulus p' = 2^(plaintext_bits + carry_bits)."""
        return 1 << (self.plaintext_bits + self.carry_bits)

    @property
    def delta(self) -> int:
        """Encoding step: q / p'."""
        return Q // self.plaintext_space_size

    @property
    def mask_grid(self) -> int:
        """Mask coefficients are multiples of q/(2N).

        Keeping masks on this grid makes the bootstrap mod-switch exact on
        the mask so only the body contributes rounding error. A real
        deployment would not restrict the mask; this trades a little mask
        entropy (already meaningless at toy sizes) for worst-case
        correctness.
        """
        return Q // (2 * self.ring_dim)

    # -- noise budgets -------------------------------------------------

    @property
    def decrypt_budget(self) -> int:
        """Decryption is exact while |noise| stays strictly below this."""
        return self.delta // 2

    @property
    def pbs_input_budget(self) -> int:
        """Bootstrap input bound: decrypt budget minus body mod-switch rounding."""
        return self.delta // 2 - Q // (4 * self.ring_dim)

    @property
    def pbs_noise_mag(self) -> int:
        """Ledger magnitude E_pbs assigned to every bootstrap output (2*E0)."""
        return 2 * self.fresh_noise_mag

    def blind_rotate_noise_bound(self) -> int:
        """Worst-case noise added by one blind rotation (linear accounting)."""
        base = (1 << self.decomp_base_bits) - 1
        per_cmux = 2 * self.decomp_levels * self.ring_dim * base * self.key_noise_mag
        return self.lwe_dim * per_cmux

    def keyswitch_noise_bound(self, source_dim: int | None = None) -> int:
        """Worst-case noise added by a key switch from `source_dim` to lwe_dim."""
        src = self.ring_dim if source_dim is None else source_dim
        base = (1 << self.decomp_base_bits) - 1
        return src * self.decomp_levels * base * self.key_noise_mag

    def pbs_output_noise_bound(self) -> int:
        """Worst-case real noise on a bootstrap output (rotation + extract + KS)."""
        return self.blind_rotate_noise_bound() + self.keyswitch_noise_bound()

    # -- identity ------------------------------------------------------

    def fingerprint(self) -> bytes:
        """32-byte digest pinning this parameter set (used by plans/frames)."""
        blob = struct.pack(
            "<8Q",
            self.lwe_dim,
            self.ring_dim,
            self.log2_q,
            self.plaintext_bits,
            self.carry_bits,
            self.fresh_noise_mag,
            self.key_noise_mag,
            self.rng_seed,
        ) + struct.pack("<2Q", self.decomp_base_bits, self.decomp_levels)
        return hashlib.sha256(blob).digest()


def micro_params(seed: int = 1337) -> CryptoParams:
    """Tiny profile for exhaustive suites: n=16, N=64."""
    return CryptoParams(lwe_dim=16, ring_dim=64, rng_seed=seed)


def toy_params(seed: int = 1337) -> CryptoParams:
    """Default desk-scale profile: n=512, N=1024."""
    return CryptoParams(lwe_dim=512, ring_dim=1024, rng_seed=seed)
