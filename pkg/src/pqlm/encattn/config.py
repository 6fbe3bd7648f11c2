"""Configuration for splicing encrypted attention into the decoder."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..fhe.params import CryptoParams, micro_params
from ..model.config import ModelConfig

HEAD_SCOPE_SINGLE = "single"
HEAD_SCOPE_ALL = "all-heads"


class FheMode(str, Enum):
    """How the target attention blocks execute.

    * ``disable``  — plain float attention everywhere (reference run).
    * ``simulate`` — the compiled integer circuit on clear codes; same
      dataflow, same tables, same bootstrap count, no ciphertexts.
    * ``execute``  — the same circuit over real LWE ciphertexts with
      blind-rotation bootstrapping.
    """

    DISABLE = "disable"
    SIMULATE = "simulate"
    EXECUTE = "execute"


@dataclass(frozen=True)
class EncAttnConfig:
    """Which attention blocks are encrypted and how they are quantized."""

    mode: FheMode = FheMode.SIMULATE
    target_layers: tuple[int, ...] = (0,)
    head_scope: str = HEAD_SCOPE_SINGLE  # "single" or "all-heads"
    n_bits: int = 2
    crypto: CryptoParams = field(default_factory=micro_params)
    plan_cache_dir: str | None = None

    def __post_init__(self):
        if self.head_scope not in (HEAD_SCOPE_SINGLE, HEAD_SCOPE_ALL):
            raise ValueError(f"unknown head scope {self.head_scope!r}")
        if self.n_bits < 1 or self.n_bits > 4:
            raise ValueError("activation codes must use 1..4 bits")
        if len(set(self.target_layers)) != len(self.target_layers):
            raise ValueError("duplicate target layers")

    def heads_for(self, model_cfg: ModelConfig) -> tuple[int, ...]:
        """Which heads of a target layer run encrypted."""
        if self.head_scope == HEAD_SCOPE_ALL:
            return tuple(range(model_cfg.n_heads))
        return (0,)

    def validate_against(self, model_cfg: ModelConfig) -> None:
        for layer in self.target_layers:
            if not 0 <= layer < model_cfg.n_layers:
                raise ValueError(f"target layer {layer} out of range")
