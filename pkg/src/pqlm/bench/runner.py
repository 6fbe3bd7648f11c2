"""Experiment runner: sweeps, aggregation, CSV/JSON emission.

Design of the sweep: the expensive part of a run is the teacher-forced
encrypted replay, and it does not depend on top-k at all — candidate
sets for every k are derivable from the per-step logits. So the runner
executes one replay per (prompt, repetition) at the largest requested
generation length and serves the whole top-k × length grid from those
recorded passes. This is also what makes the pbs-per-token column
constant across top-k by construction, which the suite asserts.

Reference tokens come from an encryption-disabled run of the same
model (greedy selection). The encrypted model is then replayed with
those tokens forced, so every step's candidate set is conditioned on
the same context the reference saw — accuracy at k is the share of
steps whose reference token appears in the encrypted model's k best
candidates, monotone in k because the candidate sets are nested.

The CSV schema (v1) is frozen: exactly the columns in ``CSV_COLUMNS``,
one row per grid cell, rows ordered by (max_new_tokens, top_k). The
JSON mirror carries the same rows plus the schema tag. Infinities are
rendered as the string "inf" in both formats.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..circuit.compile import PlanCache
from ..encattn.calibration import CalibrationTable, calibrate_block
from ..encattn.config import EncAttnConfig, FheMode
from ..encattn.hybrid import HybridModel
from ..fhe.keys import generate_key_material, serialize_eval_key
from ..fhe.lwe import serialize_ciphertext, trivial_encrypt
from ..model.config import GenerationConfig
from ..model.decoder import Decoder, generate, top_k_candidates
from ..model.io import encode_text, load_prompts
from ..model.weights import Weights, load_weights
from .metrics import (
    accuracy,
    epr,
    epr_long_from_series,
    mem_per_token,
    pbs_per_token,
    throughput,
)

CSV_SCHEMA = "pqlm-bench-v1"
CSV_COLUMNS = (
    "top_k", "mode", "scope", "accuracy_pct", "avg_infer_s", "compile_s",
    "tokens_per_s", "throughput", "pbs_count", "pbs_per_token",
    "mem_per_token_bytes", "epr_short", "epr_long",
)


@dataclass
class ExperimentSpec:
    """One benchmark configuration: a model, a mode, and a grid."""

    enc: EncAttnConfig
    prompt_path: str | None = None
    prompts: tuple[str, ...] | None = None  # in-memory alternative
    weights_path: str | None = None
    weights: Weights | None = None          # in-memory alternative
    top_k: tuple[int, ...] = (1,)
    max_new_tokens: tuple[int, ...] = (4,)
    repetitions: int = 5
    output_format: str = "csv"
    output_path: str | None = None
    prompt_limit: int | None = None
    max_prompt_tokens: int | None = None
    use_escrow: bool = False

    def __post_init__(self) -> None:
        if not self.top_k or not self.max_new_tokens:
            raise ValueError("the generation grid must be non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.output_format not in ("csv", "json"):
            raise ValueError(f"unknown output format {self.output_format!r}")
        if any(m < 1 for m in self.max_new_tokens):
            raise ValueError("generation lengths must be positive")
        if any(k < 1 for k in self.top_k):
            raise ValueError("top_k values must be positive")


@dataclass
class StepOutcome:
    """One generated token's contribution to one grid cell."""

    prompt_index: int
    repetition: int
    position: int
    ref_token: int
    topk_set: tuple[int, ...]
    chosen_token: int        # the encrypted model's own greedy pick
    wall_s: float
    pbs_used: int
    logit_norm: float        # norm of the encrypted attention output row
    noise_norm: float        # ledger noise, dequantized, as a vector norm


@dataclass
class CellResult:
    """One grid cell: fixed (top_k, max_new_tokens) under one config."""

    top_k: int
    max_new_tokens: int
    mode: str
    scope: str
    steps: list[StepOutcome]
    compile_s: float
    accounted_bytes: int     # ciphertext + plan + evaluation-key bytes
    gen_tokens_per_rep: int  # generated tokens in one repetition
    aggregates: dict[str, Any] = field(default_factory=dict)

    def recompute_aggregates(self) -> dict[str, Any]:
        """Derive every emitted aggregate from the per-step records."""
        refs = [s.ref_token for s in self.steps]
        sets = [s.topk_set for s in self.steps]
        walls = [s.wall_s for s in self.steps]
        first_rep = min(s.repetition for s in self.steps)
        pbs_count = sum(s.pbs_used for s in self.steps
                        if s.repetition == first_rep)
        avg_infer = sum(walls) / len(walls)
        tokens_per_s = len(walls) / sum(walls) if sum(walls) > 0 else math.inf
        eprs = [epr(s.logit_norm, s.noise_norm, "short") for s in self.steps]
        return {
            "top_k": self.top_k,
            "mode": self.mode,
            "scope": self.scope,
            "accuracy_pct": accuracy(refs, sets),
            "avg_infer_s": avg_infer,
            "compile_s": self.compile_s,
            "tokens_per_s": tokens_per_s,
            "throughput": throughput(tokens_per_s, avg_infer)
            if avg_infer > 0 else math.inf,
            "pbs_count": pbs_count,
            "pbs_per_token": pbs_per_token(pbs_count, self.gen_tokens_per_rep),
            "mem_per_token_bytes": mem_per_token(self.accounted_bytes,
                                                 self.gen_tokens_per_rep),
            "epr_short": sum(eprs) / len(eprs) if all(map(math.isfinite, eprs))
            else math.inf,
            "epr_long": epr_long_from_series(
                [s.logit_norm for s in self.steps],
                [s.noise_norm for s in self.steps]),
        }


@dataclass
class GenerationReport:
    """Everything a sweep produced, aggregates and evidence alike."""

    spec: ExperimentSpec
    cells: list[CellResult]
    rows: list[dict[str, Any]]
    text: str
    output_path: str | None
    compile_count: int
    compile_s: float
    prompt_count: int
    ref_continuations: list[list[int]]
    prefill_pbs_per_rep: int


@dataclass
class _Pass:
    """One teacher-forced replay of one prompt."""

    prompt_index: int
    repetition: int
    ref_tokens: list[int]
    own_tokens: list[int]
    logits: list[np.ndarray]
    walls: list[float]
    pbs: list[int]
    prefill_pbs: int
    logit_norms: list[float]
    noise_norms: list[float]


def _fmt(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if math.isinf(value):
        return "inf"
    return format(float(value), ".12g")


def render_csv(rows: Sequence[dict[str, Any]]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def render_json(rows: Sequence[dict[str, Any]]) -> str:
    safe_rows = [
        {c: ("inf" if isinstance(row[c], float) and math.isinf(row[c])
             else row[c]) for c in CSV_COLUMNS}
        for row in rows
    ]
    return json.dumps({"schema": CSV_SCHEMA, "columns": list(CSV_COLUMNS),
                       "rows": safe_rows}, indent=2) + "\n"


def _load_prompt_tokens(spec: ExperimentSpec, horizon: int,
                        max_seq_len: int) -> list[list[int]]:
    if spec.prompts is not None:
        texts = list(spec.prompts)
    elif spec.prompt_path is None:
        texts = load_prompts()  # the bundled corpus
    else:
        if not os.path.exists(spec.prompt_path):
            raise FileNotFoundError(f"prompt file not found: {spec.prompt_path}")
        texts = load_prompts(spec.prompt_path)
    if spec.prompt_limit is not None:
        texts = texts[: spec.prompt_limit]
    if not texts:
        raise ValueError("prompt corpus is empty")
    cap = max_seq_len - horizon
    if spec.max_prompt_tokens is not None:
        cap = min(cap, spec.max_prompt_tokens)
    if cap < 1:
        raise ValueError(
            f"generation length {horizon} leaves no room for a prompt "
            f"within max_seq_len={max_seq_len}")
    seqs = []
    for text in texts:
        toks = encode_text(text)[:cap]
        if toks:
            seqs.append(toks)
    if not seqs:
        raise ValueError("no non-empty prompts after tokenization")
    return seqs


def _resolve_weights(spec: ExperimentSpec) -> Weights:
    if spec.weights is not None:
        return spec.weights
    if spec.weights_path is None:
        raise ValueError("spec needs either weights or a weights_path")
    if not os.path.exists(spec.weights_path):
        raise FileNotFoundError(f"weights file not found: {spec.weights_path}")
    return load_weights(spec.weights_path)


def _step_norms(record) -> tuple[float, float]:
    """Signal and ledger-noise norms of one step's encrypted output."""
    sig_sq = 0.0
    noise_sq = 0.0
    for layer, vec in record.enc_out.items():
        sig_sq += float(np.dot(vec, vec))
        per_comp = record.noise_over_delta[layer] * record.out_scale[layer]
        noise_sq += len(vec) * per_comp * per_comp
    return math.sqrt(sig_sq), math.sqrt(noise_sq)


def run_experiment(spec: ExperimentSpec, clock: Callable[[], float] | None = None,
                   plan_cache: PlanCache | None = None) -> GenerationReport:
    """Run the sweep; returns the report and writes the output file."""
    clock = clock if clock is not None else time.perf_counter
    weights = _resolve_weights(spec)
    cfg = weights.config
    enc = spec.enc
    for k in spec.top_k:
        if k > cfg.vocab_size:
            raise ValueError(f"top_k={k} exceeds vocab size {cfg.vocab_size}")

    horizon = max(spec.max_new_tokens)
    prompt_tokens = _load_prompt_tokens(spec, horizon, cfg.max_seq_len)

    # -- reference: encryption-disabled greedy continuations ---------------
    decoder = Decoder(weights)
    ref_cfg = GenerationConfig(max_new_tokens=horizon, top_k=1,
                               vocab_size=cfg.vocab_size)
    refs: list[list[int]] = []
    for toks in prompt_tokens:
        steps, _walls = generate(decoder, toks, ref_cfg)
        if len(steps) != horizon:
            raise ValueError(
                f"prompt of {len(toks)} tokens cannot generate {horizon} "
                f"tokens within max_seq_len={cfg.max_seq_len}")
        refs.append([s.token for s in steps])

    # -- build the hybrid model (compile once) ------------------------------
    max_positions = max(len(t) for t in prompt_tokens) + horizon
    calibration: CalibrationTable | None = None
    key_material = None
    if enc.mode != FheMode.DISABLE:
        calibration = calibrate_block(
            weights, enc,
            [toks + ref for toks, ref in zip(prompt_tokens, refs)])
        if enc.mode == FheMode.EXECUTE:
            key_material = generate_key_material(enc.crypto)
    cache = plan_cache if plan_cache is not None else PlanCache(enc.plan_cache_dir)
    model = HybridModel(weights, enc, calibration=calibration,
                        key_material=key_material, plan_cache=cache,
                        max_positions=max_positions,
                        use_escrow=spec.use_escrow, clock=clock)

    # -- static byte accounting ---------------------------------------------
    ct_bytes = 0
    eval_key_bytes = 0
    if enc.mode != FheMode.DISABLE:
        ct_size = len(serialize_ciphertext(
            trivial_encrypt(0, enc.crypto, enc.crypto.plaintext_space_bits)))
        if enc.mode == FheMode.EXECUTE and not spec.use_escrow:
            eval_key_bytes = len(serialize_eval_key(
                model.backend.backend.eval_key))
        ct_size_by_pos = [
            sum(cfg.d_emb + len(model.plans[layer][p].outputs)
                for layer in enc.target_layers) * ct_size
            for p in range(max_positions)
        ]
    plan_bytes = model.plan_bytes()

    # -- teacher-forced replays ----------------------------------------------
    gen_cfg = GenerationConfig(max_new_tokens=horizon, top_k=1,
                               vocab_size=cfg.vocab_size)
    if model.plans:
        static_pbs = [
            sum(model.plans[layer][p].pbs_count for layer in enc.target_layers)
            for p in range(max_positions)
        ]
    else:
        static_pbs = [0] * max_positions
    passes: list[_Pass] = []
    for rep in range(spec.repetitions):
        for idx, toks in enumerate(prompt_tokens):
            res = model.generate(toks, gen_cfg, clock=clock,
                                 forced_tokens=refs[idx])
            if len(res.steps) != horizon:
                raise RuntimeError("replay fell short of the requested length")
            expect_prefill = sum(static_pbs[: len(toks)])
            if res.prefill_pbs != expect_prefill:
                raise RuntimeError(
                    f"prefill bootstrap tally {res.prefill_pbs} != static "
                    f"{expect_prefill}")
            norms = [_step_norms(s) for s in res.steps]
            for t, step in enumerate(res.steps):
                if step.pbs_used != static_pbs[len(toks) + t]:
                    raise RuntimeError(
                        f"step bootstrap tally {step.pbs_used} != static "
                        f"{static_pbs[len(toks) + t]} at position {step.position}")
            passes.append(_Pass(
                prompt_index=idx, repetition=rep, ref_tokens=refs[idx],
                own_tokens=[s.candidates[0] for s in res.steps],
                logits=[np.asarray(s.logits) for s in res.steps],
                walls=[s.wall_s for s in res.steps],
                pbs=[s.pbs_used for s in res.steps],
                prefill_pbs=res.prefill_pbs,
                logit_norms=[n[0] for n in norms],
                noise_norms=[n[1] for n in norms],
            ))

    # -- grid cells ------------------------------------------------------------
    cells: list[CellResult] = []
    for m in sorted(set(spec.max_new_tokens)):
        for k in sorted(set(spec.top_k)):
            steps: list[StepOutcome] = []
            for p in passes:
                base = len(prompt_tokens[p.prompt_index])
                for t in range(m):
                    steps.append(StepOutcome(
                        prompt_index=p.prompt_index,
                        repetition=p.repetition,
                        position=base + t,
                        ref_token=p.ref_tokens[t],
                        topk_set=tuple(top_k_candidates(p.logits[t], k)),
                        chosen_token=p.own_tokens[t],
                        wall_s=p.walls[t],
                        pbs_used=p.pbs[t],
                        logit_norm=p.logit_norms[t],
                        noise_norm=p.noise_norms[t],
                    ))
            if enc.mode == FheMode.DISABLE:
                accounted = 0
            else:
                moved = sum(
                    sum(ct_size_by_pos[: len(toks) + m])
                    for toks in prompt_tokens)
                accounted = moved + plan_bytes + eval_key_bytes
            cell = CellResult(
                top_k=k, max_new_tokens=m, mode=enc.mode.value,
                scope=enc.head_scope, steps=steps,
                compile_s=model.compile_s,
                accounted_bytes=accounted,
                gen_tokens_per_rep=m * len(prompt_tokens),
            )
            cell.aggregates = cell.recompute_aggregates()
            cells.append(cell)

    rows = [c.aggregates for c in cells]
    text = render_csv(rows) if spec.output_format == "csv" else render_json(rows)
    if spec.output_path:
        with open(spec.output_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return GenerationReport(
        spec=spec, cells=cells, rows=rows, text=text,
        output_path=spec.output_path,
        compile_count=cache.compiles, compile_s=model.compile_s,
        prompt_count=len(prompt_tokens), ref_continuations=refs,
        prefill_pbs_per_rep=sum(p.prefill_pbs for p in passes
                                if p.repetition == 0),
    )
