"""Range calibration for the encrypted attention blocks.

Runs the plain model over a corpus of token sequences and records, per
target layer, the min/max of every tensor class the compiled circuit
will quantize:

    x      post-norm attention input rows
    q      rotated, scaled query rows of in-scope heads
    k, v   rotated key rows / value rows of in-scope groups
    score  softmax inputs (scaled dot products)
    ctx    per-head context rows of in-scope heads
    out    the in-scope partial output rows (o-projection slice)

Records merge monotonically (min can only drop, max only rise), so the
table is independent of sequence order and can be folded across runs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..model.config import ModelConfig, kv_group_of_head
from ..model.decoder import Decoder, rms_norm, rope_rotate, softmax
from ..model.weights import Weights
from .config import EncAttnConfig

LABELS = ("x", "q", "k", "v", "score", "ctx", "out")


class CalibrationError(ValueError):
    pass


@dataclass
class CalibrationRecord:
    lo: float = float("inf")
    hi: float = float("-inf")
    count: int = 0

    def observe(self, values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size == 0:
            return
        if not np.all(np.isfinite(arr)):
            raise CalibrationError("non-finite activation during calibration")
        self.lo = min(self.lo, float(arr.min()))
        self.hi = max(self.hi, float(arr.max()))
        self.count += arr.size

    def merge(self, other: "CalibrationRecord") -> "CalibrationRecord":
        out = CalibrationRecord(min(self.lo, other.lo), max(self.hi, other.hi),
                                self.count + other.count)
        return out


@dataclass
class CalibrationTable:
    """Per-layer, per-label activation ranges."""

    records: dict[tuple[int, str], CalibrationRecord] = field(default_factory=dict)

    def record(self, layer: int, label: str) -> CalibrationRecord:
        key = (layer, label)
        if key not in self.records:
            self.records[key] = CalibrationRecord()
        return self.records[key]

    def require(self, layer: int, label: str) -> CalibrationRecord:
        key = (layer, label)
        if key not in self.records or self.records[key].count == 0:
            raise CalibrationError(f"no calibration data for layer {layer} {label!r}")
        return self.records[key]

    def merge(self, other: "CalibrationTable") -> "CalibrationTable":
        merged = CalibrationTable(dict(self.records))
        for key, rec in other.records.items():
            merged.records[key] = merged.records[key].merge(rec) if key in merged.records else rec
        return merged

    def digest(self) -> bytes:
        payload = {
            f"{layer}:{label}": [rec.lo, rec.hi, rec.count]
            for (layer, label), rec in sorted(self.records.items())
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()


def calibrate_block(weights: Weights, enc_cfg: EncAttnConfig,
                    token_seqs: list[list[int]]) -> CalibrationTable:
    """Observe every target layer over plain forward passes of the corpus."""
    cfg: ModelConfig = weights.config
    enc_cfg.validate_against(cfg)
    if not token_seqs:
        raise CalibrationError("calibration needs at least one token sequence")
    table = CalibrationTable()
    decoder = Decoder(weights)
    heads = enc_cfg.heads_for(cfg)
    groups = sorted({kv_group_of_head(h, cfg) for h in heads})
    scale = float(np.sqrt(cfg.attn_scale_dim))

    for tokens in token_seqs:
        if not tokens:
            raise CalibrationError("empty calibration sequence")
        if len(tokens) > cfg.max_seq_len:
            raise CalibrationError("calibration sequence exceeds max_seq_len")
        x = weights.token_embedding[np.asarray(tokens)].astype(np.float64)  # [T, d]
        t_total = len(tokens)
        for layer in range(cfg.n_layers):
            lw = weights.layers[layer]
            x_norm = np.stack([rms_norm(r, lw.rms_gain_attn, cfg.rms_eps) for r in x])
            q_all = x_norm @ lw.q_proj.T
            k_all = (x_norm @ lw.k_proj.T).reshape(t_total, cfg.n_kv_groups, cfg.d_head)
            v_all = (x_norm @ lw.v_proj.T).reshape(t_total, cfg.n_kv_groups, cfg.d_head)
            for t in range(t_total):
                k_all[t] = np.stack([rope_rotate(r, t, cfg.rope_base) for r in k_all[t]])
            is_target = layer in enc_cfg.target_layers
            if is_target:
                table.record(layer, "x").observe(x_norm)
                for g in groups:
                    table.record(layer, "k").observe(k_all[:, g, :])
                    table.record(layer, "v").observe(v_all[:, g, :])
            context = np.empty((t_total, cfg.d_emb))
            for h in range(cfg.n_heads):
                g = kv_group_of_head(h, cfg)
                q_h = np.stack([
                    rope_rotate(q_all[t, h * cfg.d_head:(h + 1) * cfg.d_head],
                                t, cfg.rope_base) / scale
                    for t in range(t_total)
                ])
                scores = q_h @ k_all[:, g, :].T
                mask = np.tril(np.ones((t_total, t_total), dtype=bool))
                ctx = softmax(np.where(mask, scores, -np.inf)) @ v_all[:, g, :]
                context[:, h * cfg.d_head:(h + 1) * cfg.d_head] = ctx
                if is_target and h in heads:
                    table.record(layer, "q").observe(q_h)
                    table.record(layer, "score").observe(scores[mask])
                    table.record(layer, "ctx").observe(ctx)
            if is_target:
                cols = np.concatenate([
                    np.arange(h * cfg.d_head, (h + 1) * cfg.d_head) for h in heads
                ])
                partial = context[:, cols] @ lw.o_proj[:, cols].T
                table.record(layer, "out").observe(partial)
            x = x + context @ lw.o_proj.T
            x_norm2 = np.stack([rms_norm(r, lw.rms_gain_ffn, cfg.rms_eps) for r in x])
            x = x + np.stack([decoder.ffn_layer(layer, r) for r in x_norm2])

    for layer in enc_cfg.target_layers:
        for label in LABELS:
            table.require(layer, label)
    return table
