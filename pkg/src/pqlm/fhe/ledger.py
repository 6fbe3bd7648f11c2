"""Linear worst-case noise accounting attached to every ciphertext.

Magnitudes are upper bounds on |noise| in raw modulus units, combined
with the coarse linear rules the rest of the stack plans around:

    add:            E1 + E2
    scale by k:     |k| * E
    key switch:     E + E_ks
    bootstrap:      reset to E_pbs

`product_rule` exposes the multiplicative growth model (E1 * E2) used
when reasoning about hypothetical ciphertext-ciphertext products before
any bootstrap is placed. The deployed ct-ct multiply routes through two
bootstraps, so its recorded output noise is the additive 2 * E_pbs; both
views are kept on purpose (see the design notes in the README).
"""
from __future__ import annotations

from dataclasses import dataclass

from .params import CryptoParams


@dataclass(frozen=True)
class NoiseEstimate:
    """Worst-case noise magnitude plus a refresh-age counter."""

    magnitude: float
    ops_since_refresh: int = 0

    def add(self, other: "NoiseEstimate") -> "NoiseEstimate":
        return NoiseEstimate(
            self.magnitude + other.magnitude,
            max(self.ops_since_refresh, other.ops_since_refresh) + 1,
        )

    def scale(self, k: int) -> "NoiseEstimate":
        return NoiseEstimate(abs(k) * self.magnitude, self.ops_since_refresh + 1)

    def after_keyswitch(self, params: CryptoParams, source_dim: int) -> "NoiseEstimate":
        return NoiseEstimate(
            self.magnitude + params.keyswitch_noise_bound(source_dim),
            self.ops_since_refresh + 1,
        )

    @staticmethod
    def fresh(params: CryptoParams) -> "NoiseEstimate":
        return NoiseEstimate(float(params.fresh_noise_mag), 0)

    @staticmethod
    def trivial() -> "NoiseEstimate":
        return NoiseEstimate(0.0, 0)

    @staticmethod
    def after_pbs(params: CryptoParams) -> "NoiseEstimate":
        return NoiseEstimate(float(params.pbs_noise_mag), 0)

    @staticmethod
    def product_rule(e1: "NoiseEstimate", e2: "NoiseEstimate") -> "NoiseEstimate":
        """Multiplicative worst-case model for a raw ct-ct product.

        Planning-only: nothing in the executed pipeline carries this
        magnitude because products are realized through bootstraps.
        """
        return NoiseEstimate(
            e1.magnitude * e2.magnitude,
            max(e1.ops_since_refresh, e2.ops_since_refresh) + 1,
        )

    # -- budget checks --------------------------------------------------

    def decryptable(self, params: CryptoParams) -> bool:
        """True when the ledger guarantees exact decryption."""
        return self.magnitude < params.decrypt_budget

    def bootstrappable(self, params: CryptoParams) -> bool:
        """True when the ledger guarantees a correct bootstrap."""
        return self.magnitude < params.pbs_input_budget
