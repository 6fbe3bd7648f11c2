"""Plaintext decoder forward pass: the reference model and splice host.

Single-position stepping with a key/value cache; a recompute-from-scratch
path exists as the equivalence oracle and the no-cache timing baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import GenerationConfig, ModelConfig, kv_group_of_head
from .weights import Weights


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty vector")
    return x / np.sqrt(np.mean(x * x) + eps) * gain


def rope_rotate(vec: np.ndarray, position: int, base: float) -> np.ndarray:
    """Rotate coordinate pairs (2i, 2i+1) by position * base^(-2i/d)."""
    d = vec.shape[-1]
    if d % 2:
        raise ValueError("position rotation requires an even dimension")
    half = np.arange(d // 2)
    theta = position * base ** (-2.0 * half / d)
    cos, sin = np.cos(theta), np.sin(theta)
    even, odd = vec[..., 0::2], vec[..., 1::2]
    out = np.empty_like(vec, dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_matrix(position: int, d: int, base: float) -> np.ndarray:
    """The rotation as an explicit [d, d] matrix (used to fold into weights)."""
    mat = np.zeros((d, d))
    half = np.arange(d // 2)
    theta = position * base ** (-2.0 * half / d)
    cos, sin = np.cos(theta), np.sin(theta)
    for i in range(d // 2):
        mat[2 * i, 2 * i] = cos[i]
        mat[2 * i, 2 * i + 1] = -sin[i]
        mat[2 * i + 1, 2 * i] = sin[i]
        mat[2 * i + 1, 2 * i + 1] = cos[i]
    return mat


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale_dim: int,
              causal: bool = True) -> np.ndarray:
    """Scaled dot-product attention over row-stacked sequences."""
    q2, k2, v2 = np.atleast_2d(q), np.atleast_2d(k), np.atleast_2d(v)
    if q2.shape[-1] != k2.shape[-1] or k2.shape[0] != v2.shape[0]:
        raise ValueError("attention operand shapes disagree")
    scores = q2 @ k2.T / np.sqrt(scale_dim)
    if causal:
        t_q, t_k = scores.shape
        mask = np.tril(np.ones((t_q, t_k), dtype=bool), k=t_k - t_q)
        scores = np.where(mask, scores, -np.inf)
    return softmax(scores) @ v2


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass
class KvCache:
    """Per-layer rolling key/value store: [positions, n_kv_groups, d_head]."""

    n_layers: int
    keys: list[list[np.ndarray]] = field(default_factory=list)
    values: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.keys:
            self.keys = [[] for _ in range(self.n_layers)]
            self.values = [[] for _ in range(self.n_layers)]

    def seq_len(self, layer: int = 0) -> int:
        return len(self.keys[layer])

    def append(self, layer: int, k: np.ndarray, v: np.ndarray) -> None:
        # copy so later caller-side mutation cannot rewrite history
        self.keys[layer].append(np.array(k, dtype=np.float64))
        self.values[layer].append(np.array(v, dtype=np.float64))

    def stacked(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        return np.stack(self.keys[layer]), np.stack(self.values[layer])


class Decoder:
    """The clear-path model; encrypted variants override the attention hook."""

    def __init__(self, weights: Weights):
        self.weights = weights
        self.cfg = weights.config

    # -- per-layer pieces ----------------------------------------------

    def project_kv(self, layer: int, x_norm: np.ndarray, position: int) -> tuple[np.ndarray, np.ndarray]:
        """Grouped key/value rows for one position, with rotation applied to K."""
        cfg, lw = self.cfg, self.weights.layers[layer]
        k_flat = lw.k_proj @ x_norm
        v_flat = lw.v_proj @ x_norm
        k = k_flat.reshape(cfg.n_kv_groups, cfg.d_head)
        v = v_flat.reshape(cfg.n_kv_groups, cfg.d_head)
        k = np.stack([rope_rotate(row, position, cfg.rope_base) for row in k])
        return k, v

    def attend_layer(self, layer: int, x_norm: np.ndarray, position: int,
                     cache: KvCache) -> np.ndarray:
        """Attention block output (pre-residual) for the newest position."""
        cfg, lw = self.cfg, self.weights.layers[layer]
        k_new, v_new = self.project_kv(layer, x_norm, position)
        cache.append(layer, k_new, v_new)
        keys, vals = cache.stacked(layer)  # [t+1, groups, d_head]

        q_flat = lw.q_proj @ x_norm
        context = np.empty(cfg.d_emb)
        for h in range(cfg.n_heads):
            g = kv_group_of_head(h, cfg)
            q_h = rope_rotate(q_flat[h * cfg.d_head:(h + 1) * cfg.d_head], position, cfg.rope_base)
            ctx = attention(q_h, keys[:, g, :], vals[:, g, :], cfg.attn_scale_dim)
            context[h * cfg.d_head:(h + 1) * cfg.d_head] = ctx[0]
        return lw.o_proj @ context

    def ffn_layer(self, layer: int, x_norm: np.ndarray) -> np.ndarray:
        lw = self.weights.layers[layer]
        return lw.down_proj @ (silu(lw.gate_proj @ x_norm) * (lw.up_proj @ x_norm))

    # -- stepping --------------------------------------------------------

    def forward_step(self, tokens: list[int], cache: KvCache) -> np.ndarray:
        """Logits for the next position, extending the cache by one slot.

        ``tokens`` is the full sequence so far; only the last token is
        computed (earlier ones must already be in the cache).
        """
        cfg = self.cfg
        if not tokens:
            raise ValueError("forward_step requires at least one token")
        if len(tokens) > cfg.max_seq_len:
            raise ValueError(f"sequence exceeds max_seq_len={cfg.max_seq_len}")
        position = len(tokens) - 1
        if cache.seq_len() != position:
            raise ValueError(
                f"cache holds {cache.seq_len()} positions, expected {position}"
            )
        x = self.weights.token_embedding[tokens[-1]].copy()
        for layer in range(cfg.n_layers):
            lw = self.weights.layers[layer]
            x = x + self.attend_layer(layer, rms_norm(x, lw.rms_gain_attn, cfg.rms_eps),
                                      position, cache)
            x = x + self.ffn_layer(layer, rms_norm(x, lw.rms_gain_ffn, cfg.rms_eps))
        x = rms_norm(x, self.weights.final_rms_gain, cfg.rms_eps)
        return self.weights.lm_head @ x

    def forward_batch(self, tokens: list[int]) -> np.ndarray:
        """Whole-sequence recompute with matrix attention; no cache involved.

        Returns logits for the last position. This is the independent
        oracle for cache equivalence and the no-cache timing baseline.
        """
        cfg = self.cfg
        if not tokens:
            raise ValueError("forward_batch requires at least one token")
        if len(tokens) > cfg.max_seq_len:
            raise ValueError(f"sequence exceeds max_seq_len={cfg.max_seq_len}")
        t_total = len(tokens)
        x = self.weights.token_embedding[np.asarray(tokens)]  # [T, d]
        for layer in range(cfg.n_layers):
            lw = self.weights.layers[layer]
            x_norm = np.stack([rms_norm(row, lw.rms_gain_attn, cfg.rms_eps) for row in x])
            q_all = x_norm @ lw.q_proj.T  # [T, d_emb]
            k_all = (x_norm @ lw.k_proj.T).reshape(t_total, cfg.n_kv_groups, cfg.d_head)
            v_all = (x_norm @ lw.v_proj.T).reshape(t_total, cfg.n_kv_groups, cfg.d_head)
            for t in range(t_total):
                k_all[t] = np.stack(
                    [rope_rotate(row, t, cfg.rope_base) for row in k_all[t]]
                )
            context = np.empty((t_total, cfg.d_emb))
            for h in range(cfg.n_heads):
                g = kv_group_of_head(h, cfg)
                q_h = np.stack([
                    rope_rotate(q_all[t, h * cfg.d_head:(h + 1) * cfg.d_head], t, cfg.rope_base)
                    for t in range(t_total)
                ])
                context[:, h * cfg.d_head:(h + 1) * cfg.d_head] = attention(
                    q_h, k_all[:, g, :], v_all[:, g, :], cfg.attn_scale_dim
                )
            x = x + context @ lw.o_proj.T
            x_norm2 = np.stack([rms_norm(row, lw.rms_gain_ffn, cfg.rms_eps) for row in x])
            x = x + np.stack([self.ffn_layer(layer, row) for row in x_norm2])
        last = rms_norm(x[-1], self.weights.final_rms_gain, cfg.rms_eps)
        return self.weights.lm_head @ last


def top_k_candidates(logits: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest logits; ties broken toward the lower index."""
    order = np.lexsort((np.arange(len(logits)), -np.asarray(logits)))
    return [int(i) for i in order[:k]]


def select_token(logits: np.ndarray, gen_cfg: GenerationConfig,
                 rng: np.random.Generator | None = None) -> tuple[int, list[int]]:
    candidates = top_k_candidates(logits, gen_cfg.top_k)
    if gen_cfg.selection_rule == "argmax":
        return candidates[0], candidates
    rng = rng if rng is not None else np.random.default_rng(gen_cfg.sample_seed)
    probs = softmax(np.asarray([logits[i] for i in candidates]))
    return int(rng.choice(candidates, p=probs)), candidates


@dataclass
class GenerationStep:
    position: int
    token: int
    candidates: list[int]
    logits: np.ndarray


def generate(decoder, prompt_tokens: list[int], gen_cfg: GenerationConfig,
             clock=None) -> tuple[list[GenerationStep], list[float]]:
    """Autoregressive decode; returns per-new-token steps and wall times."""
    import time

    clock = clock if clock is not None else time.perf_counter
    cache = KvCache(decoder.cfg.n_layers)
    tokens = list(prompt_tokens)
    if not tokens:
        raise ValueError("generation requires a non-empty prompt")
    rng = np.random.default_rng(gen_cfg.sample_seed)
    logits = None
    for t in range(len(tokens)):
        logits = decoder.forward_step(tokens[: t + 1], cache)

    steps: list[GenerationStep] = []
    times: list[float] = []
    for _ in range(gen_cfg.max_new_tokens):
        if len(tokens) >= decoder.cfg.max_seq_len:
            break
        t0 = clock()
        token, cands = select_token(logits, gen_cfg, rng)
        tokens.append(token)
        steps.append(GenerationStep(len(tokens) - 1, token, cands, logits))
        logits = decoder.forward_step(tokens, cache)
        times.append(clock() - t0)
    return steps, times
