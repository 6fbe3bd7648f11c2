"""Model and generation configuration."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256  # byte-level tokens
    d_emb: int = 8
    n_layers: int = 2
    n_heads: int = 4
    n_kv_groups: int = 2
    max_seq_len: int = 64
    d_ff: int = 16
    rope_base: float = 10000.0
    rms_eps: float = 1e-5
    weight_seed: int = 2024
    # Attention logits divide by sqrt(d_emb) by default; flip this to use
    # the per-head convention sqrt(d_head) instead.
    scale_by_d_head: bool = False

    def __post_init__(self) -> None:
        if self.n_heads % self.n_kv_groups:
            raise ValueError("n_heads must be divisible by n_kv_groups")
        if self.d_emb % self.n_heads:
            raise ValueError("d_emb must be divisible by n_heads")
        if self.d_head % 2:
            raise ValueError("d_head must be even for pairwise position rotations")
        if self.vocab_size < 1 or self.max_seq_len < 1:
            raise ValueError("vocab_size and max_seq_len must be positive")

    @property
    def d_head(self) -> int:
        return self.d_emb // self.n_heads

    @property
    def heads_per_group(self) -> int:
        return self.n_heads // self.n_kv_groups

    @property
    def d_kv(self) -> int:
        return self.n_kv_groups * self.d_head

    @property
    def attn_scale_dim(self) -> int:
        return self.d_head if self.scale_by_d_head else self.d_emb


@dataclass(frozen=True)
class GenerationConfig:
    max_new_tokens: int = 4
    top_k: int = 1
    selection_rule: str = "argmax"  # "argmax" | "sample"
    sample_seed: int = 0
    vocab_size: int = 256

    def __post_init__(self) -> None:
        if not 1 <= self.top_k <= self.vocab_size:
            raise ValueError("top_k must lie in [1, vocab_size]")
        if self.selection_rule not in ("argmax", "sample"):
            raise ValueError("selection_rule must be 'argmax' or 'sample'")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")


def kv_group_of_head(head: int, cfg: ModelConfig) -> int:
    """Which key/value group serves a query head."""
    if not 0 <= head < cfg.n_heads:
        raise ValueError(f"head index {head} outside [0, {cfg.n_heads})")
    return head // cfg.heads_per_group
