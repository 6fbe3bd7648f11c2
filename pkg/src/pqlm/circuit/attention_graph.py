"""Grouped-query attention as a static integer circuit.

One plan is built per sequence position `t`; it consumes the current
encrypted input row plus the cached key/value codes of earlier
positions, and emits the in-scope partial output row plus this
position's key/value codes for the server-side cache.

Structural choices (all static, none data-dependent):

* The position rotation and the 1/sqrt(scale_dim) factor are folded into
  the clear query/key projection weights, so rotation costs nothing
  under encryption.
* Softmax is computed as shifted-exp normalization: a fixed clear shift
  C (the calibrated score maximum) is folded into the exp table, the
  denominator is inverted through a clamped reciprocal table, and each
  weight is one ciphertext product. In exact arithmetic the shift
  cancels, so the ideal semantics remain true softmax whenever the
  denominator stays above the clamp floor.
* A single attended position (t = 0) makes softmax the constant 1, so
  the plan simplifies to re-quantizing the value row — no scores, no
  tables, no products.
* Wide sums are split into interval-safe groups with halving re-scale
  tables between levels (see GraphBuilder.pack_sum).
"""
from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # imported lazily to avoid a package-init cycle
    from ..encattn.calibration import CalibrationTable
    from ..encattn.config import EncAttnConfig

from ..model.config import ModelConfig, kv_group_of_head
from ..model.decoder import rope_matrix
from ..model.weights import Weights
from ..quant import QuantParams, calibrate, quantize
from .compile import ExecutionPlan, place_pbs
from .graph import INPUT_CARRIED, INPUT_FRESH, GraphBuilder, signed_code

PROJ_HEADROOM = 2  # projection sums carry one extra bit before re-quantizing


def derive_plan_qparams(table: CalibrationTable, layer: int, n_bits: int,
                        seq_len: int) -> dict[str, QuantParams]:
    """Quantization grids for one plan: empirical for data tensors,
    structural for the softmax internals."""
    qp: dict[str, QuantParams] = {}
    for label in ("x", "q", "k", "v", "ctx", "out"):
        rec = table.require(layer, label)
        qp[label] = calibrate(np.array([rec.lo, rec.hi]), n_bits)
    qp["exp"] = calibrate(np.array([0.0, 1.0]), n_bits)
    floor = qp["exp"].scale / 2
    qp["recip"] = calibrate(np.array([1.0 / max(seq_len, 1), 1.0 / floor]), n_bits)
    qp["w"] = calibrate(np.array([0.0, 1.0]), n_bits)
    return qp


def _grid_lut(gb: GraphBuilder, src: int, f, in_scale: float,
              out_q: QuantParams, label: str) -> int:
    """Table node: quantize f(real input) onto out_q's centered grid.

    The recorded real semantics include the grid's clamp — the table
    cannot represent values beyond its calibrated range, and saying so
    keeps the deviation bound finite and honest.
    """
    size = gb.params.plaintext_space_size
    bits = gb.params.plaintext_space_bits
    entries = []
    for phys in range(size):
        c = signed_code(phys, bits)
        grid = int(quantize(f(in_scale * c), out_q))
        entries.append((grid - out_q.zero_point) % size)
    lo_c, hi_c = out_q.centered_interval()
    lo_real, hi_real = lo_c * out_q.scale, hi_c * out_q.scale

    def clamped(x: float) -> float:
        return min(max(f(x), lo_real), hi_real)

    return gb.lut_node(src, tuple(entries), out_q.scale, clamped, label=label)


def _requant_to(gb: GraphBuilder, src: int, out_q: QuantParams, label: str) -> int:
    return gb.requant_lut(src, out_q.scale, label=label,
                          clamp_interval=out_q.centered_interval())


def _safe_mul(gb: GraphBuilder, a: int, b: int, label: str) -> tuple[int, int, int]:
    """Product with automatic operand halving to keep codes in range.

    Returns (product, a, b) where the operands may have been replaced by
    halved versions; callers thread them back so shared operands are
    only halved once.
    """
    def peak(nid: int) -> int:
        lo, hi = gb.nodes[nid].interval
        return max(abs(lo), abs(hi))

    while peak(a) * peak(b) > gb.code_hi:
        if peak(a) >= peak(b):
            a = gb.requant_lut(a, gb.nodes[a].scale * 2, label=f"{label}.halveL")
        else:
            b = gb.requant_lut(b, gb.nodes[b].scale * 2, label=f"{label}.halveR")
    return gb.mul(a, b, label=label), a, b


def _projection(gb: GraphBuilder, x_nodes: list[int], row: np.ndarray,
                x_scale: float, out_q: QuantParams, label: str) -> int:
    """Clear-weight row times encrypted vector, re-quantized onto a grid."""
    mid_scale = out_q.scale / PROJ_HEADROOM
    terms = []
    for j, w in enumerate(row):
        k = int(np.round(w * x_scale / mid_scale))
        terms.append((x_nodes[j], k, float(w)))
    summed = gb.pack_sum(terms, bias=0, scale=mid_scale, float_bias=0.0,
                         label=label)
    return _requant_to(gb, summed, out_q, label=f"{label}.grid")


def build_graph(cfg: EncAttnConfig, seq_len: int, *, weights: Weights,
                layer: int, calibration: CalibrationTable,
                carried_devs: dict[str, float] | None = None) -> ExecutionPlan:
    """Compile the encrypted attention block for one position.

    ``seq_len`` counts the attended positions (current one included), so
    position index t = seq_len - 1. Carried key/value codes for earlier
    positions arrive as inputs; their deviation bounds come from the
    plans that produced them via ``carried_devs``.
    """
    if seq_len < 1:
        raise ValueError("a plan must attend to at least one position")
    model_cfg: ModelConfig = weights.config
    cfg.validate_against(model_cfg)
    if layer not in cfg.target_layers:
        raise ValueError(f"layer {layer} is not a target layer")
    t = seq_len - 1
    heads = cfg.heads_for(model_cfg)
    groups = sorted({kv_group_of_head(h, model_cfg) for h in heads})
    lw = weights.layers[layer]
    d, dh = model_cfg.d_emb, model_cfg.d_head
    qp = derive_plan_qparams(calibration, layer, cfg.n_bits, seq_len)
    carried_devs = carried_devs or {}

    gb = GraphBuilder(cfg.crypto)

    # -- inputs ----------------------------------------------------------
    x_nodes = [gb.input_node(f"x.{j}", qp["x"].scale,
                             qp["x"].centered_interval(), INPUT_FRESH)
               for j in range(d)]
    k_nodes: dict[tuple[int, int, int], int] = {}
    v_nodes: dict[tuple[int, int, int], int] = {}
    for tau in range(t):
        for g in groups:
            for i in range(dh):
                for name, store, q in (("k", k_nodes, qp["k"]),
                                       ("v", v_nodes, qp["v"])):
                    lbl = f"{name}.t{tau}.g{g}.{i}"
                    store[(tau, g, i)] = gb.input_node(
                        lbl, q.scale, q.centered_interval(), INPUT_CARRIED,
                        deviation=carried_devs.get(lbl, q.scale / 2))

    # -- this position's key/value rows (rotation folded into weights) ---
    rot = rope_matrix(t, dh, model_cfg.rope_base)
    for g in groups:
        w_k = rot @ lw.k_proj[g * dh:(g + 1) * dh, :]
        w_v = lw.v_proj[g * dh:(g + 1) * dh, :]
        for i in range(dh):
            k_nodes[(t, g, i)] = _projection(gb, x_nodes, w_k[i], qp["x"].scale,
                                             qp["k"], f"k.g{g}.{i}")
            v_nodes[(t, g, i)] = _projection(gb, x_nodes, w_v[i], qp["x"].scale,
                                             qp["v"], f"v.g{g}.{i}")
            gb.mark_output(f"kcache.g{g}.{i}", k_nodes[(t, g, i)])
            gb.mark_output(f"vcache.g{g}.{i}", v_nodes[(t, g, i)])

    # -- queries (rotation and 1/sqrt(scale_dim) folded) ------------------
    inv_scale = 1.0 / math.sqrt(model_cfg.attn_scale_dim)
    q_nodes: dict[tuple[int, int], int] = {}
    for h in heads:
        w_q = rot @ lw.q_proj[h * dh:(h + 1) * dh, :] * inv_scale
        for i in range(dh):
            q_nodes[(h, i)] = _projection(gb, x_nodes, w_q[i], qp["x"].scale,
                                          qp["q"], f"q.h{h}.{i}")

    # -- per-head attention ------------------------------------------------
    ctx_nodes: dict[tuple[int, int], int] = {}
    shift = calibration.require(layer, "score").hi
    floor = qp["exp"].scale / 2
    for h in heads:
        g = kv_group_of_head(h, model_cfg)
        if t == 0:
            # softmax over one position is the constant 1: context = value row
            for i in range(dh):
                ctx_nodes[(h, i)] = _requant_to(gb, v_nodes[(0, g, i)], qp["ctx"],
                                                f"ctx.h{h}.{i}")
            continue
        exp_nodes = []
        for tau in range(t + 1):
            prods = []
            for i in range(dh):
                p, q_nodes[(h, i)], k_nodes[(tau, g, i)] = _safe_mul(
                    gb, q_nodes[(h, i)], k_nodes[(tau, g, i)],
                    f"s.h{h}.t{tau}.{i}")
                prods.append(p)
            score = gb.pack_sum([(p, 1, 1.0) for p in prods], bias=0,
                                scale=gb.nodes[prods[0]].scale, float_bias=0.0,
                                label=f"score.h{h}.t{tau}")
            exp_nodes.append(_grid_lut(
                gb, score, lambda x: math.exp(min(x - shift, 30.0)),
                gb.nodes[score].scale, qp["exp"], f"e.h{h}.t{tau}"))
        denom = gb.pack_sum([(e, 1, 1.0) for e in exp_nodes], bias=0,
                            scale=qp["exp"].scale, float_bias=0.0,
                            label=f"S.h{h}")
        recip = _grid_lut(gb, denom, lambda x: 1.0 / max(x, floor),
                          gb.nodes[denom].scale, qp["recip"], f"r.h{h}")
        w_grid: list[int] = []
        for tau, e in enumerate(exp_nodes):
            w_raw, _, recip = _safe_mul(gb, e, recip, f"w.h{h}.t{tau}")
            w_grid.append(_requant_to(gb, w_raw, qp["w"], f"w.h{h}.t{tau}.grid"))
        for i in range(dh):
            prods = []
            for tau in range(t + 1):
                p, w_grid[tau], v_nodes[(tau, g, i)] = _safe_mul(
                    gb, w_grid[tau], v_nodes[(tau, g, i)],
                    f"wv.h{h}.t{tau}.{i}")
                prods.append(p)
            packed = gb.pack_sum([(p, 1, 1.0) for p in prods], bias=0,
                                 scale=gb.nodes[prods[0]].scale, float_bias=0.0,
                                 label=f"ctx.h{h}.{i}")
            ctx_nodes[(h, i)] = _requant_to(gb, packed, qp["ctx"],
                                            f"ctx.h{h}.{i}.grid")

    # -- output projection (in-scope slice only) ---------------------------
    mid_scale = qp["out"].scale / PROJ_HEADROOM
    for j in range(d):
        terms = []
        for h in heads:
            for i in range(dh):
                w = float(lw.o_proj[j, h * dh + i])
                k = int(np.round(w * qp["ctx"].scale / mid_scale))
                terms.append((ctx_nodes[(h, i)], k, w))
        summed = gb.pack_sum(terms, bias=0, scale=mid_scale, float_bias=0.0,
                             label=f"out.{j}")
        gb.mark_output(f"out.{j}", _requant_to(gb, summed, qp["out"], f"out.{j}.grid"))

    return place_pbs(gb, seq_len, qparams=qp)


def build_attention_plans(cfg: EncAttnConfig, max_seq_len: int, *,
                          weights: Weights, layer: int,
                          calibration: CalibrationTable) -> list[ExecutionPlan]:
    """One plan per position, with deviation bounds carried through the
    key/value cache chain."""
    plans: list[ExecutionPlan] = []
    devs: dict[str, float] = {}
    model_cfg = weights.config
    heads = cfg.heads_for(model_cfg)
    groups = sorted({kv_group_of_head(h, model_cfg) for h in heads})
    for t in range(max_seq_len):
        plan = build_graph(cfg, t + 1, weights=weights, layer=layer,
                           calibration=calibration, carried_devs=dict(devs))
        plans.append(plan)
        for g in groups:
            for i in range(model_cfg.d_head):
                devs[f"k.t{t}.g{g}.{i}"] = plan.output_deviation(f"kcache.g{g}.{i}")
                devs[f"v.t{t}.g{g}.{i}"] = plan.output_deviation(f"vcache.g{g}.{i}")
    return plans
