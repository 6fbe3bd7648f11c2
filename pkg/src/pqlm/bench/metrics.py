"""Benchmark metric definitions.

Every function here is a pure formula over already-collected numbers;
the runner decides what goes in. Two deliberate quirks are preserved
from the measurement methodology this reproduces:

* ``throughput`` is the ratio (average tokens per second) divided by
  (average per-token execution time). Dimensionally that is
  tokens·s^-2, not a rate — it rewards runs that are fast by both
  measures. A conventional tokens/sec figure is always reported
  alongside it, never instead of it.
* ``accuracy`` is top-k containment: the share of steps where the
  plain model's next token appears in the encrypted model's k best
  candidates. With nested candidate sets this is monotone
  non-decreasing in k and reaches 100% at k = vocabulary size.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

EPR_INFINITE = math.inf  # sentinel: no crypto noise (encryption disabled)


def accuracy(ref_tokens: Sequence[int],
             topk_sets: Sequence[Iterable[int]]) -> float:
    """Percentage of steps whose reference token lies in the top-k set."""
    if len(ref_tokens) != len(topk_sets):
        raise ValueError(
            f"length mismatch: {len(ref_tokens)} reference tokens vs "
            f"{len(topk_sets)} candidate sets")
    if not ref_tokens:
        raise ValueError("accuracy needs at least one step")
    hits = sum(1 for ref, cand in zip(ref_tokens, topk_sets) if ref in set(cand))
    return 100.0 * hits / len(ref_tokens)


def throughput(avg_tokens_per_sec: float, avg_exec_time: float) -> float:
    """The headline ratio: mean generation rate over mean per-token time.

    Note the units: (tokens/s) / s. Use ``avg_tokens_per_sec`` itself
    for a conventional rate.
    """
    if avg_exec_time == 0:
        raise ZeroDivisionError("average execution time must be positive")
    return avg_tokens_per_sec / avg_exec_time


def pbs_per_token(pbs_count: int, generated_tokens: int) -> float:
    """Mean number of bootstraps consumed per generated token."""
    if generated_tokens == 0:
        raise ZeroDivisionError("cannot average over zero generated tokens")
    return pbs_count / generated_tokens


def mem_per_token(total_ciphertext_bytes: int, generated_tokens: int) -> float:
    """Accounted ciphertext/plan/key bytes per generated token."""
    if generated_tokens == 0:
        raise ZeroDivisionError("cannot average over zero generated tokens")
    return total_ciphertext_bytes / generated_tokens


def epr(logit_norm: float, noise_norm: float, horizon: str = "short") -> float:
    """Effective precision ratio: signal norm over crypto-noise norm.

    ``horizon`` is documentation of which variant the caller computed
    ("short" = one step's output vector; "long" = whole-generation
    stack over RMS per-step noise); the arithmetic is the same ratio.
    Zero noise (encryption disabled) returns the +inf sentinel.
    """
    if horizon not in ("short", "long"):
        raise ValueError(f"unknown horizon {horizon!r}")
    if noise_norm < 0 or logit_norm < 0:
        raise ValueError("norms must be non-negative")
    if noise_norm == 0:
        return EPR_INFINITE
    return logit_norm / noise_norm


def epr_long_from_series(logit_norms: Sequence[float],
                         noise_norms: Sequence[float]) -> float:
    """Whole-run variant: stacked signal norm over RMS per-step noise.

    Numerator: Frobenius norm of the stacked per-step output vectors,
    i.e. sqrt(sum of squared per-step norms). Denominator: root mean
    square of the per-step noise norms.
    """
    if len(logit_norms) != len(noise_norms):
        raise ValueError("per-step norm series must have equal lengths")
    if not logit_norms:
        raise ValueError("empty series")
    num = math.sqrt(sum(v * v for v in logit_norms))
    rms = math.sqrt(sum(v * v for v in noise_norms) / len(noise_norms))
    return epr(num, rms, "long")
