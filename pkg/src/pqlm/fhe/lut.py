"""Lookup tables evaluated under encryption by programmable bootstrapping.

A table is a plain tuple of non-negative integers indexed by the
ciphertext's current plaintext value. Tables are parameter-free; the
bootstrap backend turns them into ring test vectors and checks that
entries fit the widened plaintext space at evaluation time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable


@dataclass(frozen=True)
class LookupTable:
    entries: tuple[int, ...]
    input_bits: int
    _tv_cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self) -> None:
        if len(self.entries) != 1 << self.input_bits:
            raise ValueError(
                f"table has {len(self.entries)} entries, needs 2^{self.input_bits}"
            )
        if any(e < 0 for e in self.entries):
            raise ValueError("table entries must be non-negative plaintext codes")

    @property
    def output_bits(self) -> int:
        return max(1, max(self.entries).bit_length())

    @classmethod
    def from_function(
        cls, f: Callable[[int], int], input_bits: int, modulus: int | None = None
    ) -> "LookupTable":
        vals = [int(f(v)) for v in range(1 << input_bits)]
        if modulus is not None:
            vals = [v % modulus for v in vals]
        return cls(entries=tuple(vals), input_bits=input_bits)

    @classmethod
    def identity(cls, input_bits: int) -> "LookupTable":
        return cls(entries=tuple(range(1 << input_bits)), input_bits=input_bits)
