"""Reusable oracles shared by the module tests and the acceptance suite.

Two heavyweight checkers live here so both layers can run them at
different volumes: the noise-ledger soundness fuzzer and the wire-frame
corruption fuzzer.
"""
from __future__ import annotations

import numpy as np

from pqlm.fhe.keys import KeyMaterial
from pqlm.fhe.lut import LookupTable
from pqlm.fhe.lwe import add_clear, add_ct, mul_pt, sub_ct
from pqlm.fhe.params import CryptoParams
from pqlm.protocol.frames import (
    TYPE_CIPHERTEXT_BATCH,
    TYPE_ERROR,
    TYPE_EVAL_KEY,
    TYPE_PLAN,
    TYPE_RESULT,
    Frame,
    ProtocolError,
    decode_frame,
    encode_frame,
)


def random_lut(rng: np.random.Generator, input_bits: int,
               modulus: int) -> LookupTable:
    entries = tuple(int(v) for v in rng.integers(0, modulus, size=1 << input_bits))
    return LookupTable(entries=entries, input_bits=input_bits)


def run_ledger_fuzz(km: KeyMaterial, backend, n_sequences: int,
                    seed: int = 0) -> dict[str, int]:
    """Random op sequences; whenever the ledger claims a ciphertext is
    still decryptable, decryption must return the tracked value.

    Returns counters so callers can confirm every branch was exercised.
    Raises AssertionError on the first soundness violation.
    """
    p: CryptoParams = km.params
    modulus = p.plaintext_space_size
    space = p.plaintext_space_bits
    rng = np.random.default_rng(seed)
    stats = {"sequences": 0, "ops": 0, "decrypt_checks": 0,
             "undecryptable_states": 0, "pbs": 0, "skipped_pbs": 0}

    for _ in range(n_sequences):
        exp = int(rng.integers(0, modulus))
        ct = km.encrypt(exp, plaintext_space=space)
        for _ in range(int(rng.integers(3, 9))):
            op = int(rng.integers(0, 6))
            if op == 0:
                m2 = int(rng.integers(0, modulus))
                ct = add_ct(ct, km.encrypt(m2, plaintext_space=space))
                exp = (exp + m2) % modulus
            elif op == 1:
                m2 = int(rng.integers(0, modulus))
                ct = sub_ct(ct, km.encrypt(m2, plaintext_space=space))
                exp = (exp - m2) % modulus
            elif op == 2:
                if rng.integers(0, 4) == 0:
                    # occasionally scale hard enough to cross the decrypt
                    # budget, so the ledger's "no longer safe" side is
                    # genuinely exercised too
                    k = (1 << int(rng.integers(12, 18))) * (
                        -1 if rng.integers(0, 2) else 1)
                else:
                    k = int(rng.integers(-8, 9))
                ct = mul_pt(ct, k)
                exp = (exp * k) % modulus
            elif op == 3:
                m2 = int(rng.integers(0, modulus))
                ct = add_clear(ct, m2)
                exp = (exp + m2) % modulus
            else:
                if ct.noise.bootstrappable(p):
                    lut = random_lut(rng, ct.plaintext_space, modulus)
                    ct = backend.pbs(ct, lut)
                    exp = lut.entries[exp % (1 << lut.input_bits)]
                    stats["pbs"] += 1
                else:
                    stats["skipped_pbs"] += 1
            stats["ops"] += 1
            if ct.noise.decryptable(p):
                got = km.decrypt(ct)
                want = exp % (1 << ct.plaintext_space)
                assert got == want, (
                    f"ledger said decryptable but got {got}, expected {want} "
                    f"(noise bound {ct.noise.magnitude:.3g})")
                stats["decrypt_checks"] += 1
            else:
                stats["undecryptable_states"] += 1
        stats["sequences"] += 1
    return stats


def sample_valid_frames(rng: np.random.Generator) -> list[bytes]:
    """One well-formed encoded frame of every type, with varied payloads."""
    frames = []
    for ftype in (TYPE_EVAL_KEY, TYPE_PLAN, TYPE_CIPHERTEXT_BATCH,
                  TYPE_RESULT, TYPE_ERROR):
        size = int(rng.integers(0, 200))
        payload = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        frames.append(encode_frame(Frame(ftype, payload)))
    return frames


def corrupt_frame(raw: bytes, rng: np.random.Generator) -> bytes:
    """Apply one random corruption that provably changes the byte stream.

    Mix of burst flips (1..4 contiguous bytes anywhere, including bursts
    spanning the payload/checksum boundary), truncations, and extensions.
    """
    kind = int(rng.integers(0, 10))
    buf = bytearray(raw)
    if kind == 8 and len(buf) > 1:  # truncate
        return bytes(buf[: int(rng.integers(1, len(buf)))])
    if kind == 9:  # extend
        extra = rng.integers(0, 256, size=int(rng.integers(1, 8)),
                             dtype=np.uint8).tobytes()
        return bytes(buf) + extra
    burst = int(rng.integers(1, 5))
    start = int(rng.integers(0, len(buf) - burst + 1))
    mask = rng.integers(0, 256, size=burst, dtype=np.uint8)
    while not mask.any():
        mask = rng.integers(0, 256, size=burst, dtype=np.uint8)
    for i in range(burst):
        buf[start + i] ^= int(mask[i])
    return bytes(buf)


def run_frame_fuzz(n_frames: int, seed: int = 0) -> int:
    """Corrupt ``n_frames`` valid frames; every one must be rejected by
    ``decode_frame`` (a pure function of the bytes — nothing downstream
    of framing ever sees the payload). Returns the rejection count."""
    rng = np.random.default_rng(seed)
    pool = sample_valid_frames(rng)
    rejected = 0
    for i in range(n_frames):
        raw = pool[i % len(pool)]
        bad = corrupt_frame(raw, rng)
        assert bad != raw
        try:
            decode_frame(bad)
        except ProtocolError:
            rejected += 1
        else:
            raise AssertionError(
                f"corrupted frame #{i} was accepted ({len(bad)} bytes)")
    return rejected


def fit_slope(xs, ys) -> float:
    """Least-squares slope of ys against xs."""
    return float(np.polyfit(np.asarray(xs, dtype=float),
                            np.asarray(ys, dtype=float), 1)[0])
