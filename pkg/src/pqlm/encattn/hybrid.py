"""The hybrid decoder: plain layers everywhere, compiled attention at
the target layers.

Three modes share one code path. ``disable`` routes every attention
block through the plain float math (and is bit-identical to the plain
decoder, since it calls the same methods on the same weights).
``simulate`` runs the compiled integer circuit on clear codes;
``execute`` runs the identical circuit over LWE ciphertexts. The
encrypted key/value codes of earlier positions stay "server-side":
they are carried from plan to plan as opaque backend values and never
round-trip through the clear.

Out-of-scope heads of a target layer still run in the clear — the
compiled block computes only the in-scope slice of the output
projection, and the two partial rows are summed.
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..circuit.attention_graph import build_attention_plans
from ..circuit.compile import ExecutionPlan, PlanCache
from ..circuit.executor import FheBackend, FloatBackend, IntBackend, run_plan
from ..circuit.graph import signed_code
from ..fhe.keys import KeyMaterial, make_eval_key
from ..fhe.pbs import BlindRotateBackend, EscrowBackend, PbsCounter
from ..model.config import GenerationConfig, kv_group_of_head
from ..model.decoder import (
    Decoder,
    KvCache,
    attention,
    rms_norm,
    rope_rotate,
    select_token,
)
from ..model.weights import Weights, weights_digest
from ..quant import quantize
from .calibration import CalibrationTable
from .config import EncAttnConfig, FheMode


@dataclass
class StepRecord:
    """Everything one generated token contributes to the metrics."""

    position: int
    token: int
    candidates: list[int]
    logits: np.ndarray
    wall_s: float = 0.0
    pbs_used: int = 0
    enc_out: dict[int, np.ndarray] = field(default_factory=dict)
    ideal_out: dict[int, np.ndarray] = field(default_factory=dict)
    bound_out: dict[int, np.ndarray] = field(default_factory=dict)
    noise_over_delta: dict[int, float] = field(default_factory=dict)
    out_scale: dict[int, float] = field(default_factory=dict)


@dataclass
class GenerationResult:
    steps: list[StepRecord]
    tokens: list[int]
    compile_s: float
    plan_pbs_per_position: list[int]
    plan_bytes: int
    prefill_pbs: int = 0


class HybridModel:
    """Plain decoder with compiled attention spliced into target layers."""

    def __init__(self, weights: Weights, enc_cfg: EncAttnConfig, *,
                 calibration: CalibrationTable | None = None,
                 key_material: KeyMaterial | None = None,
                 plan_cache: PlanCache | None = None,
                 max_positions: int | None = None,
                 use_escrow: bool = False,
                 clock=None):
        self._clock = clock if clock is not None else _time.perf_counter
        self.weights = weights
        self.cfg = weights.config
        self.enc_cfg = enc_cfg
        enc_cfg.validate_against(self.cfg)
        self.decoder = Decoder(weights)
        self.mode = enc_cfg.mode
        self.max_positions = max_positions or self.cfg.max_seq_len
        self.counter = PbsCounter()
        self.compile_s = 0.0
        self.plans: dict[int, list[ExecutionPlan]] = {}
        self.plan_cache = plan_cache if plan_cache is not None else PlanCache(
            enc_cfg.plan_cache_dir)
        self.key_material = key_material
        self.backend = None
        self._enc_kv: dict[int, dict[str, Any]] = {}
        self._float_kv: dict[int, dict[str, float]] = {}

        if self.mode == FheMode.DISABLE:
            return
        if calibration is None:
            raise ValueError("simulate/execute modes need a calibration table")
        self.calibration = calibration
        self._compile_all()
        if self.mode == FheMode.SIMULATE:
            self.backend = IntBackend(enc_cfg.crypto)
        else:
            if key_material is None:
                raise ValueError("execute mode needs client key material")
            if key_material.params != enc_cfg.crypto:
                raise ValueError("key material does not match the configured parameters")
            if use_escrow:
                self.backend = FheBackend(
                    EscrowBackend(key_material, counter=self.counter), enc_cfg.crypto)
            else:
                self.backend = FheBackend(
                    BlindRotateBackend(make_eval_key(key_material),
                                       counter=self.counter), enc_cfg.crypto)
        self._float = FloatBackend(enc_cfg.crypto)
        self.reset()

    # -- plan management ---------------------------------------------------

    def _compile_all(self) -> None:
        self.compile_s = 0.0
        for layer in self.enc_cfg.target_layers:
            key = PlanCache.digest(
                self.enc_cfg.crypto.fingerprint(),
                weights_digest(self.weights),
                self.calibration.digest(),
                repr((self.enc_cfg.head_scope, self.enc_cfg.n_bits, layer,
                      self.max_positions, self.cfg)).encode(),
            )
            plans, dt, _ = self.plan_cache.get_or_compile(
                key, self.enc_cfg.crypto,
                lambda layer=layer: build_attention_plans(
                    self.enc_cfg, self.max_positions, weights=self.weights,
                    layer=layer, calibration=self.calibration),
                clock=self._clock)
            self.plans[layer] = plans
            self.compile_s += dt
        from ..circuit.compile import serialize_plan_set
        self._plan_bytes = sum(
            len(serialize_plan_set(p)) for p in self.plans.values())

    def plan_bytes(self) -> int:
        return getattr(self, "_plan_bytes", 0)

    def reset(self) -> None:
        """Forget all cached positions (start of a new sequence)."""
        self._enc_kv = {layer: {} for layer in self.enc_cfg.target_layers}
        self._float_kv = {layer: {} for layer in self.enc_cfg.target_layers}

    # -- encrypted attention for one position ------------------------------

    def _encode_input(self, value: float, qp) -> Any:
        code = int(quantize(value, qp)) - qp.zero_point
        if self.mode == FheMode.SIMULATE:
            return code
        space = self.enc_cfg.crypto.plaintext_space_bits
        return self.key_material.encrypt(code % (1 << space), plaintext_space=space)

    def _decode_value(self, value: Any, scale: float) -> float:
        if self.mode == FheMode.SIMULATE:
            return float(value) * scale
        space = value.plaintext_space
        return signed_code(self.key_material.decrypt(value), space) * scale

    def _run_target_attention(self, layer: int, x_norm: np.ndarray,
                              position: int, record: StepRecord) -> np.ndarray:
        if position >= len(self.plans[layer]):
            raise ValueError(
                f"position {position} beyond compiled horizon "
                f"{len(self.plans[layer])}; raise max_positions")
        plan = self.plans[layer][position]
        qp = plan.qparams
        d = self.cfg.d_emb

        inputs = {f"x.{j}": self._encode_input(float(x_norm[j]), qp["x"])
                  for j in range(d)}
        inputs.update(self._enc_kv[layer])
        result = run_plan(plan, inputs, self.backend)
        record.pbs_used += result.pbs_used

        # carry this position's key/value codes forward, server-side
        for label, nid in plan.outputs.items():
            if label.startswith(("kcache.", "vcache.")):
                parts = label.split(".")  # e.g. kcache.g0.1
                carried = f"{label[0]}.t{position}.{parts[1]}.{parts[2]}"
                self._enc_kv[layer][carried] = result.outputs[label]

        out = np.array([
            self._decode_value(result.outputs[f"out.{j}"],
                               plan.nodes[plan.outputs[f"out.{j}"]].scale)
            for j in range(d)
        ])

        # ideal real-valued mirror of the same dataflow
        if plan.has_float_semantics:
            f_inputs = {f"x.{j}": float(x_norm[j]) for j in range(d)}
            f_inputs.update(self._float_kv[layer])
            f_result = run_plan(plan, f_inputs, self._float)
            for label, nid in plan.outputs.items():
                if label.startswith(("kcache.", "vcache.")):
                    parts = label.split(".")
                    carried = f"{label[0]}.t{position}.{parts[1]}.{parts[2]}"
                    self._float_kv[layer][carried] = f_result.outputs[label]
            ideal = np.array([f_result.outputs[f"out.{j}"] for j in range(d)])
            record.ideal_out[layer] = ideal
        record.enc_out[layer] = out
        record.bound_out[layer] = np.array(
            [plan.output_deviation(f"out.{j}") for j in range(d)])
        out_nodes = [plan.nodes[plan.outputs[f"out.{j}"]] for j in range(d)]
        record.noise_over_delta[layer] = (
            max(n.noise.magnitude for n in out_nodes) / self.enc_cfg.crypto.delta)
        record.out_scale[layer] = qp["out"].scale
        return out

    def _plain_partial(self, layer: int, x_norm: np.ndarray, position: int,
                       cache: KvCache, heads: tuple[int, ...]) -> np.ndarray:
        """Clear attention for the given heads, from the plain cache."""
        cfg, lw = self.cfg, self.weights.layers[layer]
        keys, vals = cache.stacked(layer)
        q_flat = lw.q_proj @ x_norm
        out = np.zeros(cfg.d_emb)
        for h in heads:
            g = kv_group_of_head(h, cfg)
            q_h = rope_rotate(q_flat[h * cfg.d_head:(h + 1) * cfg.d_head],
                              position, cfg.rope_base)
            ctx = attention(q_h, keys[:, g, :], vals[:, g, :], cfg.attn_scale_dim)
            cols = np.arange(h * cfg.d_head, (h + 1) * cfg.d_head)
            out += lw.o_proj[:, cols] @ ctx[0]
        return out

    # -- decoding -----------------------------------------------------------

    def forward_step(self, tokens: list[int], cache: KvCache,
                     record: StepRecord | None = None) -> np.ndarray:
        cfg = self.cfg
        if not tokens:
            raise ValueError("forward_step requires at least one token")
        if len(tokens) > cfg.max_seq_len:
            raise ValueError(f"sequence exceeds max_seq_len={cfg.max_seq_len}")
        position = len(tokens) - 1
        if cache.seq_len() != position:
            raise ValueError(
                f"cache holds {cache.seq_len()} positions, expected {position}")
        if record is None:
            record = StepRecord(position, -1, [], np.zeros(1))
        x = self.weights.token_embedding[tokens[-1]].copy()
        scope_heads = self.enc_cfg.heads_for(cfg)
        for layer in range(cfg.n_layers):
            lw = self.weights.layers[layer]
            x_norm = rms_norm(x, lw.rms_gain_attn, cfg.rms_eps)
            enc_layer = (self.mode != FheMode.DISABLE
                         and layer in self.enc_cfg.target_layers)
            if enc_layer:
                k_new, v_new = self.decoder.project_kv(layer, x_norm, position)
                cache.append(layer, k_new, v_new)
                enc_part = self._run_target_attention(layer, x_norm, position,
                                                      record)
                plain_heads = tuple(h for h in range(cfg.n_heads)
                                    if h not in scope_heads)
                plain_part = (self._plain_partial(layer, x_norm, position,
                                                  cache, plain_heads)
                              if plain_heads else np.zeros(cfg.d_emb))
                attn_out = enc_part + plain_part
            else:
                attn_out = self.decoder.attend_layer(layer, x_norm, position,
                                                     cache)
            x = x + attn_out
            x = x + self.decoder.ffn_layer(
                layer, rms_norm(x, lw.rms_gain_ffn, cfg.rms_eps))
        x = rms_norm(x, self.weights.final_rms_gain, cfg.rms_eps)
        return self.weights.lm_head @ x

    def generate(self, prompt_tokens: list[int], gen_cfg: GenerationConfig,
                 clock=None, forced_tokens: list[int] | None = None
                 ) -> GenerationResult:
        """Autoregressive decode (or teacher-forced replay when
        ``forced_tokens`` extends the prompt)."""
        clock = clock if clock is not None else self._clock
        if not prompt_tokens:
            raise ValueError("generation requires a non-empty prompt")
        self.reset()
        cache = KvCache(self.cfg.n_layers)
        tokens = list(prompt_tokens)
        rng = np.random.default_rng(gen_cfg.sample_seed)
        logits = None
        prefill_pbs = 0
        for i in range(len(tokens)):
            prefill = StepRecord(i, tokens[i], [], np.zeros(1))
            logits = self.forward_step(tokens[: i + 1], cache, prefill)
            prefill_pbs += prefill.pbs_used
        steps: list[StepRecord] = []
        n_new = (gen_cfg.max_new_tokens if forced_tokens is None
                 else len(forced_tokens))
        for step_i in range(n_new):
            if len(tokens) >= min(self.cfg.max_seq_len, self.max_positions):
                break
            t0 = clock()
            token, cands = select_token(logits, gen_cfg, rng)
            if forced_tokens is not None:
                token = forced_tokens[step_i]
            tokens.append(token)
            record = StepRecord(len(tokens) - 1, token, cands,
                                np.asarray(logits))
            logits = self.forward_step(tokens, cache, record)
            record.wall_s = clock() - t0
            steps.append(record)
        plan_pbs = []
        if self.mode != FheMode.DISABLE and self.enc_cfg.target_layers:
            plan_pbs = [
                sum(self.plans[layer][t].pbs_count
                    for layer in self.enc_cfg.target_layers)
                for t in range(self.max_positions)
            ]
        return GenerationResult(
            steps=steps, tokens=tokens, compile_s=self.compile_s,
            plan_pbs_per_position=plan_pbs,
            plan_bytes=self.plan_bytes(), prefill_pbs=prefill_pbs)
