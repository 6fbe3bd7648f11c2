"""Static integer circuit graphs over the widened plaintext space.

Every node's value is a *centered* signed code ``c`` with an attached
``scale``: the node's real meaning is ``scale * c``. Codes live in
[-p'/2, p'/2) and are carried mod p' inside ciphertexts. Four node
kinds exist (the clear/quantized mirror of the Fig.-style restriction to
linear and univariate pieces):

* ``input``    — supplied at run time (client-encrypted or server-cached),
* ``const``    — a fixed clear code,
* ``linear``   — integer-weighted sum of earlier nodes plus a bias,
* ``mul``      — encrypted x encrypted product (two bootstraps),
* ``lut``      — univariate table (one bootstrap).

Alongside the integer semantics each node tracks three static analyses:
a signed code interval (overflow safety), a worst-case deviation bound
|ideal_real - scale*code| (quantization-error accounting), and — once
bootstrap placement has run — a worst-case noise estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..fhe.ledger import NoiseEstimate
from ..fhe.lut import LookupTable
from ..fhe.params import CryptoParams

INPUT_FRESH = "fresh"
INPUT_CARRIED = "carried"

KIND_INPUT = "input"
KIND_CONST = "const"
KIND_LINEAR = "linear"
KIND_MUL = "mul"
KIND_LUT = "lut"

_KIND_CODES = {KIND_INPUT: 0, KIND_CONST: 1, KIND_LINEAR: 2, KIND_MUL: 3, KIND_LUT: 4}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def signed_code(value: int, bits: int) -> int:
    """Two's-complement decode of a physical code."""
    value %= 1 << bits
    return value - (1 << bits) if value >= 1 << (bits - 1) else value


@dataclass
class Node:
    nid: int
    kind: str
    inputs: tuple[int, ...]
    scale: float
    interval: tuple[int, int]  # signed code range, inclusive
    label: str = ""
    # kind-specific payloads
    coeffs: tuple[int, ...] = ()
    bias: int = 0
    const_code: int = 0
    lut: LookupTable | None = None
    input_noise: str = INPUT_FRESH
    # analyses
    deviation: float = 0.0  # |ideal_real - scale*code| worst case
    noise: NoiseEstimate = field(default_factory=lambda: NoiseEstimate(0.0))
    # ideal real semantics; linear: (weights, bias), lut: callable. Not serialized.
    float_weights: tuple[float, ...] = ()
    float_bias: float = 0.0
    float_fn: Callable[[float], float] | None = None


class GraphBuilder:
    """Incremental DAG builder with interval and deviation bookkeeping."""

    def __init__(self, params: CryptoParams):
        self.params = params
        self.nodes: list[Node] = []
        self.inputs: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        half = params.plaintext_space_size // 2
        self.code_lo, self.code_hi = -half, half - 1
        self.space_bits = params.plaintext_space_bits

    # -- node constructors ------------------------------------------------

    def _push(self, node: Node) -> int:
        lo, hi = node.interval
        if lo < self.code_lo or hi > self.code_hi:
            raise ValueError(
                f"node {node.label or node.nid} interval {node.interval} leaves "
                f"[{self.code_lo}, {self.code_hi}]"
            )
        if lo > hi:
            raise ValueError("empty interval")
        self.nodes.append(node)
        return node.nid

    def input_node(self, label: str, scale: float, interval: tuple[int, int],
                   noise_kind: str = INPUT_FRESH, deviation: float | None = None) -> int:
        if label in self.inputs:
            raise ValueError(f"duplicate input label {label!r}")
        nid = len(self.nodes)
        dev = scale / 2 if deviation is None else deviation
        self.inputs[label] = nid
        return self._push(Node(nid, KIND_INPUT, (), scale, interval, label,
                               input_noise=noise_kind, deviation=dev))

    def const(self, code: int, scale: float, label: str = "") -> int:
        nid = len(self.nodes)
        return self._push(Node(nid, KIND_CONST, (), scale, (code, code), label,
                               const_code=code, deviation=0.0))

    def linear(self, inputs: tuple[int, ...], coeffs: tuple[int, ...], bias: int,
               scale: float, float_weights: tuple[float, ...], float_bias: float,
               label: str = "") -> int:
        """out = sum(k_i * c_i) + bias, real meaning sum(w_i * v_i) + b."""
        if len(inputs) != len(coeffs) or len(inputs) != len(float_weights):
            raise ValueError("linear arity mismatch")
        lo = hi = bias
        dev = abs(float_bias - scale * bias)
        for nid_in, k, w in zip(inputs, coeffs, float_weights):
            src = self.nodes[nid_in]
            a, b = k * src.interval[0], k * src.interval[1]
            lo += min(a, b)
            hi += max(a, b)
            c_max = max(abs(src.interval[0]), abs(src.interval[1]))
            eps = w * src.scale - scale * k  # per-code mismatch of the rounding
            dev += abs(w) * src.deviation + abs(eps) * c_max
        nid = len(self.nodes)
        return self._push(Node(nid, KIND_LINEAR, tuple(inputs), scale, (lo, hi), label,
                               coeffs=tuple(coeffs), bias=bias, deviation=dev,
                               float_weights=tuple(float_weights), float_bias=float_bias))

    def mul(self, a: int, b: int, label: str = "") -> int:
        na, nb = self.nodes[a], self.nodes[b]
        prods = [x * y for x in na.interval for y in nb.interval]
        lo, hi = min(prods), max(prods)
        scale = na.scale * nb.scale
        va = max(abs(na.interval[0]), abs(na.interval[1])) * na.scale + na.deviation
        vb = max(abs(nb.interval[0]), abs(nb.interval[1])) * nb.scale + nb.deviation
        dev = va * nb.deviation + vb * na.deviation + na.deviation * nb.deviation
        nid = len(self.nodes)
        return self._push(Node(nid, KIND_MUL, (a, b), scale, (lo, hi), label,
                               deviation=dev))

    def lut_node(self, src: int, entries: tuple[int, ...], scale: float,
                 float_fn: Callable[[float], float], label: str = "") -> int:
        """Univariate table over the full widened space; one bootstrap.

        Entries are physical codes (mod p'); the node's logical values are
        their signed decodes. The deviation bound is evaluated per
        reachable input code at the edges of its ideal-value window —
        exact for monotone ``float_fn`` (all tables this compiler emits).
        """
        if len(entries) != self.params.plaintext_space_size:
            raise ValueError("circuit tables must span the full widened space")
        node_in = self.nodes[src]
        bits = self.space_bits
        reachable = range(node_in.interval[0], node_in.interval[1] + 1)
        logical = [signed_code(entries[c % (1 << bits)], bits) for c in reachable]
        lo, hi = min(logical), max(logical)
        dev = 0.0
        for c, out_code in zip(reachable, logical):
            for x in (node_in.scale * c - node_in.deviation,
                      node_in.scale * c + node_in.deviation):
                dev = max(dev, abs(scale * out_code - float_fn(x)))
        lut = LookupTable(entries=tuple(int(e) % (1 << bits) for e in entries),
                          input_bits=bits)
        nid = len(self.nodes)
        return self._push(Node(nid, KIND_LUT, (src,), scale, (lo, hi), label,
                               lut=lut, deviation=dev, float_fn=float_fn))

    def mark_output(self, label: str, nid: int) -> None:
        if label in self.outputs:
            raise ValueError(f"duplicate output label {label!r}")
        self.outputs[label] = nid

    # -- derived tables ----------------------------------------------------

    def requant_lut(self, src: int, out_scale: float, label: str = "",
                    clamp_interval: tuple[int, int] | None = None) -> int:
        """Rescale a node to a new scale (round, then clamp if asked).

        The real-valued meaning is the identity *clamped to the
        representable range of the output grid* — exactly what the table
        does. Used both for halving partial sums and for re-quantizing
        onto a calibrated grid.
        """
        node_in = self.nodes[src]
        bits = self.space_bits
        lo_c, hi_c = clamp_interval if clamp_interval else (self.code_lo, self.code_hi)
        lo_real, hi_real = lo_c * out_scale, hi_c * out_scale

        def table_entry(c_phys: int) -> int:
            c = signed_code(c_phys, bits)
            out = int(np.round(c * node_in.scale / out_scale))
            return max(lo_c, min(hi_c, out)) % (1 << bits)

        entries = tuple(table_entry(v) for v in range(1 << bits))
        return self.lut_node(src, entries, out_scale,
                             lambda x: min(max(x, lo_real), hi_real),
                             label=label or f"requant@{out_scale:g}")

    # -- interval-safe summation -------------------------------------------

    def pack_sum(self, terms: list[tuple[int, int, float]], bias: int,
                 scale: float, float_bias: float, label: str) -> int:
        """Sum coeff*node terms without leaving the code interval.

        ``terms`` is a list of (node id, integer coeff, float weight); all
        term nodes must share one scale. Greedily groups terms whose
        summed interval fits the space, then halves group results with
        rescale tables and recurses. Returns a node at ``scale * 2^r``
        for whatever r the packing needed; callers requantize if they
        care about the exact output scale.
        """
        if not terms:
            return self.const(bias, scale, label=label)
        level_scale = scale
        level = list(terms)
        first = True
        while True:
            groups: list[list[tuple[int, int, float]]] = [[]]
            lo = hi = bias if first else 0
            for nid_t, k, w in level:
                node = self.nodes[nid_t]
                a, b = k * node.interval[0], k * node.interval[1]
                nlo, nhi = lo + min(a, b), hi + max(a, b)
                if groups[-1] and (nlo < self.code_lo or nhi > self.code_hi):
                    groups.append([])
                    lo = hi = 0
                    nlo, nhi = min(k * node.interval[0], k * node.interval[1]), max(
                        k * node.interval[0], k * node.interval[1])
                groups[-1].append((nid_t, k, w))
                lo, hi = nlo, nhi
            sums = []
            for gi, group in enumerate(groups):
                ids = tuple(g[0] for g in group)
                ks = tuple(g[1] for g in group)
                ws = tuple(g[2] for g in group)
                g_bias = bias if (first and gi == 0) else 0
                g_fbias = float_bias if (first and gi == 0) else 0.0
                sums.append(self.linear(ids, ks, g_bias, level_scale, ws, g_fbias,
                                        label=f"{label}.sum{gi}"))
            if len(sums) == 1:
                return sums[0]
            level_scale *= 2
            level = [
                (self.requant_lut(s, level_scale, label=f"{label}.half"), 1, 1.0)
                for s in sums
            ]
            first = False

    # -- info ---------------------------------------------------------------

    def topo_check(self) -> None:
        for node in self.nodes:
            for src in node.inputs:
                if src >= node.nid:
                    raise ValueError("graph is not topologically ordered")
