"""Seeded weight initialization and the versioned binary weight file.

Weight file layout (all little-endian):

    magic "PQL3" | u32 version | u32 vocab_size | u32 d_emb | u32 n_layers
    | u32 n_heads | u32 n_kv_groups | u32 max_seq_len | u32 d_ff
    | f64 rope_base | f64 rms_eps | u64 weight_seed | u8 scale_by_d_head
    | tensors as row-major f32 in the order produced by `tensor_order`.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig

WEIGHTS_MAGIC = b"PQL3"
WEIGHTS_VERSION = 1


@dataclass
class LayerWeights:
    rms_gain_attn: np.ndarray  # [d_emb]
    q_proj: np.ndarray  # [d_emb, d_emb]
    k_proj: np.ndarray  # [d_kv, d_emb]
    v_proj: np.ndarray  # [d_kv, d_emb]
    o_proj: np.ndarray  # [d_emb, d_emb]
    rms_gain_ffn: np.ndarray  # [d_emb]
    gate_proj: np.ndarray  # [d_ff, d_emb]
    up_proj: np.ndarray  # [d_ff, d_emb]
    down_proj: np.ndarray  # [d_emb, d_ff]


@dataclass
class Weights:
    config: ModelConfig
    token_embedding: np.ndarray  # [vocab, d_emb]
    layers: list[LayerWeights]
    final_rms_gain: np.ndarray  # [d_emb]
    lm_head: np.ndarray  # [vocab, d_emb]


def _init(rng: np.random.Generator, *shape: int) -> np.ndarray:
    fan_in = shape[-1]
    return rng.uniform(-0.5, 0.5, size=shape) / np.sqrt(fan_in)


def init_weights(cfg: ModelConfig) -> Weights:
    rng = np.random.default_rng(np.random.PCG64(cfg.weight_seed))
    layers = []
    for _ in range(cfg.n_layers):
        layers.append(
            LayerWeights(
                rms_gain_attn=rng.uniform(0.8, 1.2, size=cfg.d_emb),
                q_proj=_init(rng, cfg.d_emb, cfg.d_emb),
                k_proj=_init(rng, cfg.d_kv, cfg.d_emb),
                v_proj=_init(rng, cfg.d_kv, cfg.d_emb),
                o_proj=_init(rng, cfg.d_emb, cfg.d_emb),
                rms_gain_ffn=rng.uniform(0.8, 1.2, size=cfg.d_emb),
                gate_proj=_init(rng, cfg.d_ff, cfg.d_emb),
                up_proj=_init(rng, cfg.d_ff, cfg.d_emb),
                down_proj=_init(rng, cfg.d_emb, cfg.d_ff),
            )
        )
    return Weights(
        config=cfg,
        token_embedding=rng.uniform(-1.0, 1.0, size=(cfg.vocab_size, cfg.d_emb)),
        layers=layers,
        final_rms_gain=rng.uniform(0.8, 1.2, size=cfg.d_emb),
        lm_head=_init(rng, cfg.vocab_size, cfg.d_emb),
    )


def tensor_order(w: Weights) -> list[tuple[str, np.ndarray]]:
    out = [("token_embedding", w.token_embedding)]
    for i, lw in enumerate(w.layers):
        for name in (
            "rms_gain_attn", "q_proj", "k_proj", "v_proj", "o_proj",
            "rms_gain_ffn", "gate_proj", "up_proj", "down_proj",
        ):
            out.append((f"layer{i}.{name}", getattr(lw, name)))
    out.append(("final_rms_gain", w.final_rms_gain))
    out.append(("lm_head", w.lm_head))
    return out


def weights_digest(w: Weights) -> bytes:
    """Content hash of the weight tensors plus their configuration."""
    h = hashlib.sha256()
    h.update(repr(w.config).encode())
    for name, tensor in tensor_order(w):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return h.digest()


def save_weights(w: Weights, path: str) -> None:
    cfg = w.config
    head = WEIGHTS_MAGIC + struct.pack(
        "<IIIIIIIIddQB",
        WEIGHTS_VERSION,
        cfg.vocab_size, cfg.d_emb, cfg.n_layers, cfg.n_heads,
        cfg.n_kv_groups, cfg.max_seq_len, cfg.d_ff,
        cfg.rope_base, cfg.rms_eps, cfg.weight_seed,
        1 if cfg.scale_by_d_head else 0,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        for _, tensor in tensor_order(w):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_weights(path: str) -> Weights:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise ValueError("not a weight file (bad magic)")
    fields = struct.unpack_from("<IIIIIIIIddQB", data, 4)
    version = fields[0]
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    cfg = ModelConfig(
        vocab_size=fields[1], d_emb=fields[2], n_layers=fields[3],
        n_heads=fields[4], n_kv_groups=fields[5], max_seq_len=fields[6],
        d_ff=fields[7], rope_base=fields[8], rms_eps=fields[9],
        weight_seed=fields[10], scale_by_d_head=bool(fields[11]),
    )
    off = 4 + struct.calcsize("<IIIIIIIIddQB")
    template = init_weights(cfg)

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        off += 4 * count
        return arr.astype(np.float64).reshape(shape)

    loaded = []
    for name, tensor in tensor_order(template):
        loaded.append((name, take(tensor.shape)))
    if off != len(data):
        raise ValueError("weight file has trailing bytes")
    vals = dict(loaded)
    layers = []
    for i in range(cfg.n_layers):
        layers.append(LayerWeights(**{
            name: vals[f"layer{i}.{name}"]
            for name in ("rms_gain_attn", "q_proj", "k_proj", "v_proj", "o_proj",
                         "rms_gain_ffn", "gate_proj", "up_proj", "down_proj")
        }))
    return Weights(
        config=cfg,
        token_embedding=vals["token_embedding"],
        layers=layers,
        final_rms_gain=vals["final_rms_gain"],
        lm_head=vals["lm_head"],
    )
