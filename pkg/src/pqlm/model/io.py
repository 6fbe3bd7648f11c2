"""Byte-level tokenizer and the prompt corpus loader."""
from __future__ import annotations

import importlib.resources


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_tokens(tokens: list[int]) -> str:
    return bytes(int(t) & 0xFF for t in tokens).decode("utf-8", errors="replace")


def load_prompts(path: str | None = None) -> list[str]:
    """One prompt per line; the bundled corpus ships 79 of them."""
    if path is None:
        ref = importlib.resources.files("pqlm").joinpath("data/prompts.txt")
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    prompts = [line.strip() for line in text.splitlines() if line.strip()]
    if not prompts:
        raise ValueError("prompt corpus is empty")
    return prompts
