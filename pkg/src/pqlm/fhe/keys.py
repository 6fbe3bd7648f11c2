"""Key generation, encryption/decryption, and keyswitching.

Two key objects with hard role separation:

* ``KeyMaterial`` (role ``client-secret``) holds the LWE secret, the ring
  secret, the public mask pool, and the only RNG that ever sees secrets.
* ``EvalKey`` (role ``server-evaluation``) holds the bootstrap key (one
  gadget-encrypted row pair per secret bit) plus the extract keyswitch
  key. It contains nothing that decrypts.

All randomness is drawn from a PCG64 stream seeded by the parameter set,
so key generation is bit-reproducible for a given seed.
"""
from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .ledger import NoiseEstimate
from .lwe import LweCiphertext
from .params import MASK64, CryptoParams
from .poly import NegacyclicEngine, decompose_u64

ROLE_CLIENT_SECRET = "client-secret"
ROLE_SERVER_EVALUATION = "server-evaluation"
_ROLE_BYTES = {ROLE_CLIENT_SECRET: 1, ROLE_SERVER_EVALUATION: 2}
_BYTE_ROLES = {v: k for k, v in _ROLE_BYTES.items()}

KEY_SERIAL_VERSION = 1
_ZERO_POOL_SIZE = 64


class BudgetExhaustedError(ValueError):
    """The noise ledger no longer guarantees exact decryption."""


def _wrap_sum(values: np.ndarray) -> int:
    """Sum of uint64 entries mod 2^64 as a python int."""
    return int(values.sum(dtype=np.uint64))


def round_message(phase: int, delta: int) -> int:
    """Round phase/delta with ties to even, over the wrapping domain."""
    quo, rem = divmod(phase, delta)
    half = delta // 2
    if rem > half or (rem == half and quo % 2 == 1):
        quo += 1
    return quo


@dataclass
class KeySwitchKey:
    """Digit-decomposed encryptions of a source key under a target key."""

    a: np.ndarray  # uint64 [src_dim, levels, target_dim]
    b: np.ndarray  # uint64 [src_dim, levels]
    src_dim: int
    params: CryptoParams

    def noise_bound(self) -> float:
        return float(self.params.keyswitch_noise_bound(self.src_dim))


def apply_keyswitch(
    a_src: np.ndarray, b_src: int, ksk: KeySwitchKey
) -> tuple[np.ndarray, int]:
    """Re-express an LWE sample under the keyswitch key's target key.

    The decomposition is exact over all 64 bits, so the only noise added
    is the keyswitch key's own, bounded by ``ksk.noise_bound()``.
    """
    p = ksk.params
    digits = decompose_u64(a_src, p.decomp_base_bits, p.decomp_levels)  # [levels, src]
    flat = digits.T.reshape(1, -1)  # [1, src*levels]
    a_out = (-(flat @ ksk.a.reshape(-1, ksk.a.shape[-1]))[0]).astype(np.uint64)
    b_out = (b_src - _wrap_sum(flat[0] * ksk.b.reshape(-1))) & MASK64
    return a_out, b_out


def keyswitch_ct(ct: LweCiphertext, ksk: KeySwitchKey) -> LweCiphertext:
    """Re-express a ciphertext under the keyswitch key's target key.

    Same plaintext, new key; the keyswitch key's own noise bound is added
    to the ledger.
    """
    if len(ct.a) != ksk.src_dim:
        raise ValueError(
            f"keyswitch key expects a {ksk.src_dim}-dim source mask, "
            f"got {len(ct.a)}")
    a_out, b_out = apply_keyswitch(ct.a, ct.b, ksk)
    return LweCiphertext(
        a=a_out,
        b=b_out,
        plaintext_space=ct.plaintext_space,
        noise=ct.noise.after_keyswitch(ksk.params, ksk.src_dim),
        params=ksk.params,
    )


@dataclass
class EvalKey:
    """Public evaluation key: bootstrap key + extract keyswitch key."""

    params: CryptoParams
    bsk: np.ndarray  # uint64 [n, 2, levels, 2, N]
    extract_ksk: KeySwitchKey  # ring-coefficient key -> LWE key
    role: str = ROLE_SERVER_EVALUATION
    params_fingerprint: bytes = b""

    def __post_init__(self) -> None:
        if not self.params_fingerprint:
            self.params_fingerprint = self.params.fingerprint()


@dataclass
class KeyMaterial:
    """Client-side secrets plus the deterministic RNG that made them."""

    params: CryptoParams
    sk: np.ndarray  # uint64 [n], binary
    ring_key: np.ndarray  # uint64 [N], binary
    pool_a: np.ndarray  # uint64 [pool, n], masks on the grid
    pool_b: np.ndarray  # uint64 [pool]
    rng: np.random.Generator
    role: str = ROLE_CLIENT_SECRET
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    # -- encryption ----------------------------------------------------

    def encrypt(self, m: int, plaintext_space: int | None = None) -> LweCiphertext:
        p = self.params
        space = p.plaintext_bits if plaintext_space is None else plaintext_space
        if not 0 < space <= p.plaintext_space_bits:
            raise ValueError("plaintext_space out of range")
        if not 0 <= m < (1 << space):
            raise ValueError(f"message {m} outside [0, 2^{space})")
        with self._lock:
            i, j = self.rng.integers(0, len(self.pool_b), size=2)
            e = int(self.rng.integers(-(p.fresh_noise_mag // 2), p.fresh_noise_mag // 2 + 1))
        a = self.pool_a[i] + self.pool_a[j]
        b = (int(self.pool_b[i]) + int(self.pool_b[j]) + p.delta * m + e) & MASK64
        return LweCiphertext(a, b, space, NoiseEstimate.fresh(p), p)

    def phase(self, ct: LweCiphertext) -> int:
        return (ct.b - _wrap_sum(ct.a * self.sk)) & MASK64

    def decrypt(self, ct: LweCiphertext, check: bool = True) -> int:
        """Exact decryption; refuses ciphertexts the ledger cannot vouch for.

        ``check=False`` returns the (possibly wrong) rounded value anyway,
        for diagnostics.
        """
        p = self.params
        if check and not ct.noise.decryptable(p):
            raise BudgetExhaustedError(
                f"noise magnitude {ct.noise.magnitude:.3g} is at or beyond "
                f"the decryption budget {p.decrypt_budget}")
        m = round_message(self.phase(ct), p.delta) % p.plaintext_space_size
        return m % (1 << ct.plaintext_space)

    def decrypt_with_residual(self, ct: LweCiphertext) -> tuple[int, int]:
        """Decrypted message plus the signed sub-rounding residual."""
        p = self.params
        phase = self.phase(ct)
        m = round_message(phase, p.delta)
        residual = phase - p.delta * m  # in (-delta/2, delta/2]
        return m % p.plaintext_space_size % (1 << ct.plaintext_space), residual

    # -- keyswitch-key construction -------------------------------------

    def _grid_mask(self, shape: tuple[int, ...]) -> np.ndarray:
        p = self.params
        steps = self.rng.integers(0, 2 * p.ring_dim, size=shape, dtype=np.uint64)
        return steps * np.uint64(p.mask_grid)

    def make_keyswitch_key(self, src_key: np.ndarray) -> KeySwitchKey:
        """Encrypt every digit-shifted source-key bit under our LWE key."""
        p = self.params
        src_dim = len(src_key)
        levels, base_bits = p.decomp_levels, p.decomp_base_bits
        with self._lock:
            a = self._grid_mask((src_dim, levels, p.lwe_dim))
            e = self.rng.integers(
                -p.key_noise_mag, p.key_noise_mag + 1, size=(src_dim, levels)
            )
        body = (a * self.sk).sum(axis=-1, dtype=np.uint64)
        shifts = (np.arange(levels, dtype=np.uint64) * np.uint64(base_bits))[None, :]
        gadget = (src_key.astype(np.uint64)[:, None] << shifts).astype(np.uint64)
        b = body + gadget + e.astype(np.uint64)
        return KeySwitchKey(a=a, b=b, src_dim=src_dim, params=p)


def generate_key_material(params: CryptoParams) -> KeyMaterial:
    rng = np.random.default_rng(np.random.PCG64(params.rng_seed))
    sk = rng.integers(0, 2, size=params.lwe_dim, dtype=np.uint64)
    ring_key = rng.integers(0, 2, size=params.ring_dim, dtype=np.uint64)
    pool_steps = rng.integers(
        0, 2 * params.ring_dim, size=(_ZERO_POOL_SIZE, params.lwe_dim), dtype=np.uint64
    )
    pool_a = pool_steps * np.uint64(params.mask_grid)
    pool_e = rng.integers(
        -(params.fresh_noise_mag // 4),
        params.fresh_noise_mag // 4 + 1,
        size=_ZERO_POOL_SIZE,
    )
    pool_b = (pool_a * sk).sum(axis=-1, dtype=np.uint64) + pool_e.astype(np.uint64)
    return KeyMaterial(
        params=params, sk=sk, ring_key=ring_key, pool_a=pool_a, pool_b=pool_b, rng=rng
    )


def make_eval_key(km: KeyMaterial) -> EvalKey:
    """Derive the public evaluation key from client secrets.

    The bootstrap key encrypts each LWE secret bit as a gadget row pair
    over the ring: row 0 carries the bit on the mask component, row 1 on
    the body, so the external product can rebuild bit * (A, B) exactly.
    """
    p = km.params
    n, big_n = p.lwe_dim, p.ring_dim
    levels, base_bits = p.decomp_levels, p.decomp_base_bits
    engine = NegacyclicEngine(big_n)

    bsk = np.zeros((n, 2, levels, 2, big_n), dtype=np.uint64)
    with km._lock:
        masks = km._grid_mask((n, 2, levels, big_n))
        errs = km.rng.integers(
            -p.key_noise_mag, p.key_noise_mag + 1, size=(n, 2, levels, big_n)
        )
    bodies = np.empty_like(masks)
    chunk = 64  # bounds the limb-FFT working set to a few tens of MB
    for lo in range(0, n, chunk):
        bodies[lo : lo + chunk] = engine.mul_small(masks[lo : lo + chunk], km.ring_key)
    bodies += errs.astype(np.uint64)
    bsk[:, :, :, 0, :] = masks
    bsk[:, :, :, 1, :] = bodies
    bits = km.sk.astype(np.uint64)
    for j in range(levels):
        gadget = (bits << np.uint64(base_bits * j)).astype(np.uint64)
        bsk[:, 0, j, 0, 0] += gadget  # bit lands on the mask constant term
        bsk[:, 1, j, 1, 0] += gadget  # bit lands on the body constant term

    extract_ksk = km.make_keyswitch_key(km.ring_key)
    return EvalKey(params=p, bsk=bsk, extract_ksk=extract_ksk)


# -- serialization -----------------------------------------------------


def _pack_array(arr: np.ndarray) -> bytes:
    shape = arr.shape
    head = struct.pack("<B", len(shape)) + b"".join(struct.pack("<Q", s) for s in shape)
    return head + np.ascontiguousarray(arr, dtype="<u8").tobytes()


def _unpack_array(data: bytes, off: int) -> tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<B", data, off)
    off += 1
    shape = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(data, dtype="<u8", count=count, offset=off).astype(np.uint64)
    off += 8 * count
    return arr.reshape(shape), off


def serialize_eval_key(ek: EvalKey) -> bytes:
    head = struct.pack("<IB", KEY_SERIAL_VERSION, _ROLE_BYTES[ek.role])
    head += ek.params_fingerprint
    parts = [
        _pack_array(ek.bsk),
        _pack_array(ek.extract_ksk.a),
        _pack_array(ek.extract_ksk.b),
        struct.pack("<Q", ek.extract_ksk.src_dim),
    ]
    return head + b"".join(parts)


def deserialize_eval_key(data: bytes, params: CryptoParams) -> EvalKey:
    version, role_byte = struct.unpack_from("<IB", data, 0)
    if version != KEY_SERIAL_VERSION:
        raise ValueError(f"unsupported key version {version}")
    role = _BYTE_ROLES.get(role_byte)
    if role != ROLE_SERVER_EVALUATION:
        raise ValueError(
            f"refusing to load role {role!r} as an evaluation key; "
            "secret key material must never reach the evaluating party"
        )
    off = 5
    fp = data[off : off + 32]
    off += 32
    if fp != params.fingerprint():
        raise ValueError("evaluation key was generated under different parameters")
    bsk, off = _unpack_array(data, off)
    ksk_a, off = _unpack_array(data, off)
    ksk_b, off = _unpack_array(data, off)
    (src_dim,) = struct.unpack_from("<Q", data, off)
    ksk = KeySwitchKey(a=ksk_a, b=ksk_b, src_dim=int(src_dim), params=params)
    return EvalKey(params=params, bsk=bsk, extract_ksk=ksk, params_fingerprint=fp)


def serialize_key_material(km: KeyMaterial) -> bytes:
    """Client-secret key file. Holds everything that decrypts — keep it
    on the client side only; the server deserializers refuse it."""
    head = struct.pack("<IB", KEY_SERIAL_VERSION, _ROLE_BYTES[km.role])
    head += km.params.fingerprint()
    state = json.dumps(km.rng.bit_generator.state, sort_keys=True).encode()
    parts = [
        _pack_array(km.sk),
        _pack_array(km.ring_key),
        _pack_array(km.pool_a),
        _pack_array(km.pool_b),
        struct.pack("<I", len(state)),
        state,
    ]
    return head + b"".join(parts)


def deserialize_key_material(data: bytes, params: CryptoParams) -> KeyMaterial:
    version, role_byte = struct.unpack_from("<IB", data, 0)
    if version != KEY_SERIAL_VERSION:
        raise ValueError(f"unsupported key version {version}")
    if _BYTE_ROLES.get(role_byte) != ROLE_CLIENT_SECRET:
        raise ValueError("not a client key file")
    off = 5
    fp = data[off : off + 32]
    off += 32
    if fp != params.fingerprint():
        raise ValueError("key material was generated under different parameters")
    sk, off = _unpack_array(data, off)
    ring_key, off = _unpack_array(data, off)
    pool_a, off = _unpack_array(data, off)
    pool_b, off = _unpack_array(data, off)
    (state_len,) = struct.unpack_from("<I", data, off)
    off += 4
    state = json.loads(data[off : off + state_len].decode())
    rng = np.random.default_rng(np.random.PCG64())
    rng.bit_generator.state = state
    return KeyMaterial(params=params, sk=sk, ring_key=ring_key,
                       pool_a=pool_a, pool_b=pool_b, rng=rng)
