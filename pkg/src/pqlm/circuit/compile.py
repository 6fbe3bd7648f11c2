"""Bootstrap placement, executable plans, and the PQPL wire format.

`place_pbs` turns a built graph into an `ExecutionPlan` by filling in
worst-case noise for every node and inserting identity-table refresh
bootstraps wherever the linear noise ledger says a downstream operation
would otherwise start from an undecryptable operand. The enforced
invariant is simple: *every* node's output noise stays below the
bootstrap input budget. Linear nodes grow noise (sum of |coeff| * E) and
ct-ct products add their operands' noise, so those are the only two
sites that can violate the invariant; table nodes reset noise.

A plan is static: its node list, bootstrap count, byte size, and
deviation bounds are all fixed before any ciphertext exists.
"""
from __future__ import annotations

import hashlib
import io
import os
import struct
import time
from dataclasses import dataclass, field

from ..fhe.ledger import NoiseEstimate
from ..fhe.lut import LookupTable
from ..fhe.params import CryptoParams
from ..quant import QuantParams
from .graph import (
    GraphBuilder,
    INPUT_CARRIED,
    INPUT_FRESH,
    KIND_CONST,
    KIND_INPUT,
    KIND_LINEAR,
    KIND_LUT,
    KIND_MUL,
    Node,
    _CODE_KINDS,
    _KIND_CODES,
)

PLAN_MAGIC = b"PQPL"
PLAN_VERSION = 1


class CompileError(ValueError):
    """The graph cannot be scheduled within the noise budget."""


@dataclass
class ExecutionPlan:
    """A bootstrap-placed graph ready to run on any backend."""

    params: CryptoParams
    nodes: list[Node]
    inputs: dict[str, int]
    outputs: dict[str, int]
    seq_len: int
    qparams: dict[str, QuantParams] = field(default_factory=dict)
    has_float_semantics: bool = True

    @property
    def pbs_count(self) -> int:
        """Static bootstrap count: 1 per table, 2 per ct-ct product."""
        total = 0
        for node in self.nodes:
            if node.kind == KIND_LUT:
                total += 1
            elif node.kind == KIND_MUL:
                total += 2
        return total

    @property
    def n_encrypted_inputs(self) -> int:
        return sum(1 for n in self.nodes if n.kind == KIND_INPUT)

    def output_deviation(self, label: str) -> float:
        return self.nodes[self.outputs[label]].deviation

    def byte_size(self) -> int:
        return len(serialize_plan(self))


def place_pbs(builder: GraphBuilder, seq_len: int,
              qparams: dict[str, QuantParams] | None = None) -> ExecutionPlan:
    """Fill worst-case noise and insert refresh bootstraps where needed."""
    builder.topo_check()
    params = builder.params
    budget = params.pbs_input_budget
    fresh = NoiseEstimate.fresh(params)
    boot = NoiseEstimate.after_pbs(params)
    if boot.magnitude >= budget:
        raise CompileError("bootstrap output noise exceeds its own input budget")

    out_nodes: list[Node] = []
    remap: dict[int, int] = {}
    refreshed: dict[int, int] = {}  # new-id -> refresh-node new-id

    def emit(node: Node) -> int:
        node.nid = len(out_nodes)
        out_nodes.append(node)
        return node.nid

    def refresh(new_id: int) -> int:
        """Identity-table bootstrap of an already-emitted node."""
        if new_id in refreshed:
            return refreshed[new_id]
        src = out_nodes[new_id]
        if src.noise.magnitude >= budget:
            raise CompileError(
                f"node {src.label or src.nid} cannot be refreshed: its own "
                f"noise {src.noise.magnitude:.3g} exceeds the bootstrap budget")
        size = params.plaintext_space_size
        ident = LookupTable(entries=tuple(range(size)),
                            input_bits=params.plaintext_space_bits)
        node = Node(0, KIND_LUT, (new_id,), src.scale, src.interval,
                    label=(src.label or f"n{new_id}") + ".refresh",
                    lut=ident, deviation=src.deviation,
                    noise=boot, float_fn=lambda x: x)
        rid = emit(node)
        refreshed[new_id] = rid
        return rid

    for old in builder.nodes:
        ins = tuple(remap[i] for i in old.inputs)
        node = Node(0, old.kind, ins, old.scale, old.interval, old.label,
                    coeffs=old.coeffs, bias=old.bias, const_code=old.const_code,
                    lut=old.lut, input_noise=old.input_noise,
                    deviation=old.deviation, float_weights=old.float_weights,
                    float_bias=old.float_bias, float_fn=old.float_fn)
        if old.kind == KIND_INPUT:
            node.noise = boot if old.input_noise == INPUT_CARRIED else fresh
            if node.noise.magnitude >= budget:
                raise CompileError("fresh input noise exceeds the bootstrap budget")
        elif old.kind == KIND_CONST:
            node.noise = NoiseEstimate.trivial()
        elif old.kind == KIND_LINEAR:
            while True:
                total = 0.0
                worst_i, worst_mag = -1, -1.0
                for idx, (src_id, k) in enumerate(zip(node.inputs, node.coeffs)):
                    mag = abs(k) * out_nodes[src_id].noise.magnitude
                    total += mag
                    if (mag > worst_mag
                            and out_nodes[src_id].noise.magnitude > boot.magnitude):
                        worst_i, worst_mag = idx, mag
                if total < budget:
                    node.noise = NoiseEstimate(total)
                    break
                if worst_i < 0:
                    raise CompileError(
                        f"linear node {node.label or '?'} needs noise "
                        f"{total:.3g} < {budget:.3g} even with all inputs "
                        f"refreshed; coefficients too large for these parameters")
                new_in = list(node.inputs)
                new_in[worst_i] = refresh(new_in[worst_i])
                node.inputs = tuple(new_in)
        elif old.kind == KIND_MUL:
            while True:
                ea = out_nodes[node.inputs[0]].noise.magnitude
                eb = out_nodes[node.inputs[1]].noise.magnitude
                if ea + eb < budget:
                    break
                pick = 0 if ea >= eb else 1
                if out_nodes[node.inputs[pick]].noise.magnitude <= boot.magnitude:
                    pick = 1 - pick
                if out_nodes[node.inputs[pick]].noise.magnitude <= boot.magnitude:
                    raise CompileError(
                        f"product node {node.label or '?'} operands exceed the "
                        "bootstrap budget even when refreshed")
                new_in = list(node.inputs)
                new_in[pick] = refresh(new_in[pick])
                node.inputs = tuple(new_in)
            node.noise = NoiseEstimate(2 * boot.magnitude)
        elif old.kind == KIND_LUT:
            # invariant: operand noise < budget already
            if out_nodes[node.inputs[0]].noise.magnitude >= budget:
                raise CompileError("table operand exceeds budget (invariant broken)")
            node.noise = boot
        remap[old.nid] = emit(node)

    return ExecutionPlan(
        params=params,
        nodes=out_nodes,
        inputs={k: remap[v] for k, v in builder.inputs.items()},
        outputs={k: remap[v] for k, v in builder.outputs.items()},
        seq_len=seq_len,
        qparams=dict(qparams or {}),
        has_float_semantics=True,
    )


# ---------------------------------------------------------------------------
# PQPL serialization
# ---------------------------------------------------------------------------

def _pack_str(out: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _unpack_str(buf: io.BytesIO) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def serialize_plan(plan: ExecutionPlan) -> bytes:
    """PQPL: magic, version, parameter fingerprint, seq_len, node table,
    qparams table, and the input/output directories."""
    out = io.BytesIO()
    out.write(PLAN_MAGIC)
    out.write(struct.pack("<I", PLAN_VERSION))
    out.write(plan.params.fingerprint())
    out.write(struct.pack("<II", plan.seq_len, len(plan.nodes)))
    for node in plan.nodes:
        out.write(struct.pack("<B", _KIND_CODES[node.kind]))
        _pack_str(out, node.label)
        out.write(struct.pack("<iidddI", node.interval[0], node.interval[1],
                              node.scale, node.deviation,
                              node.noise.magnitude, node.noise.ops_since_refresh))
        if node.kind == KIND_INPUT:
            out.write(struct.pack("<B", 1 if node.input_noise == INPUT_CARRIED else 0))
        elif node.kind == KIND_CONST:
            out.write(struct.pack("<i", node.const_code))
        elif node.kind == KIND_LINEAR:
            out.write(struct.pack("<H", len(node.inputs)))
            for src, k in zip(node.inputs, node.coeffs):
                out.write(struct.pack("<Iq", src, k))
            out.write(struct.pack("<q", node.bias))
        elif node.kind == KIND_MUL:
            out.write(struct.pack("<II", node.inputs[0], node.inputs[1]))
        elif node.kind == KIND_LUT:
            assert node.lut is not None
            out.write(struct.pack("<IBH", node.inputs[0], node.lut.input_bits,
                                  len(node.lut.entries)))
            out.write(bytes(node.lut.entries))
    for directory in (plan.inputs, plan.outputs):
        out.write(struct.pack("<I", len(directory)))
        for label in sorted(directory):
            _pack_str(out, label)
            out.write(struct.pack("<I", directory[label]))
    out.write(struct.pack("<I", len(plan.qparams)))
    for label in sorted(plan.qparams):
        qp = plan.qparams[label]
        _pack_str(out, label)
        out.write(struct.pack("<BdiddB", qp.n_bits, qp.scale, qp.zero_point,
                              qp.observed_min, qp.observed_max,
                              1 if qp.degenerate else 0))
    return out.getvalue()


def deserialize_plan(raw: bytes, params: CryptoParams) -> ExecutionPlan:
    buf = io.BytesIO(raw)
    if buf.read(4) != PLAN_MAGIC:
        raise ValueError("not a plan blob (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != PLAN_VERSION:
        raise ValueError(f"unsupported plan version {version}")
    fp = buf.read(32)
    if fp != params.fingerprint():
        raise ValueError("plan was compiled for different crypto parameters")
    seq_len, n_nodes = struct.unpack("<II", buf.read(8))
    nodes: list[Node] = []
    for nid in range(n_nodes):
        (kind_code,) = struct.unpack("<B", buf.read(1))
        kind = _CODE_KINDS[kind_code]
        label = _unpack_str(buf)
        lo, hi, scale, dev, noise_mag, noise_ops = struct.unpack(
            "<iidddI", buf.read(36))
        node = Node(nid, kind, (), scale, (lo, hi), label, deviation=dev,
                    noise=NoiseEstimate(noise_mag, noise_ops))
        if kind == KIND_INPUT:
            (carried,) = struct.unpack("<B", buf.read(1))
            node.input_noise = INPUT_CARRIED if carried else INPUT_FRESH
        elif kind == KIND_CONST:
            (node.const_code,) = struct.unpack("<i", buf.read(4))
        elif kind == KIND_LINEAR:
            (arity,) = struct.unpack("<H", buf.read(2))
            ins, ks = [], []
            for _ in range(arity):
                src, k = struct.unpack("<Iq", buf.read(12))
                ins.append(src)
                ks.append(k)
            node.inputs, node.coeffs = tuple(ins), tuple(ks)
            (node.bias,) = struct.unpack("<q", buf.read(8))
        elif kind == KIND_MUL:
            node.inputs = struct.unpack("<II", buf.read(8))
        elif kind == KIND_LUT:
            src, bits, n_entries = struct.unpack("<IBH", buf.read(7))
            entries = tuple(buf.read(n_entries))
            node.inputs = (src,)
            node.lut = LookupTable(entries=entries, input_bits=bits)
        for src in node.inputs:
            if src >= nid:
                raise ValueError("plan is not topologically ordered")
        nodes.append(node)
    inputs: dict[str, int] = {}
    outputs: dict[str, int] = {}
    for directory in (inputs, outputs):
        (count,) = struct.unpack("<I", buf.read(4))
        for _ in range(count):
            label = _unpack_str(buf)
            (nid,) = struct.unpack("<I", buf.read(4))
            if nid >= n_nodes:
                raise ValueError("directory references a missing node")
            directory[label] = nid
    qparams: dict[str, QuantParams] = {}
    (count,) = struct.unpack("<I", buf.read(4))
    for _ in range(count):
        label = _unpack_str(buf)
        n_bits, scale, zp, lo_f, hi_f, degen = struct.unpack(
            "<BdiddB", buf.read(30))
        qparams[label] = QuantParams(n_bits=n_bits, scale=scale, zero_point=zp,
                                     observed_min=lo_f, observed_max=hi_f,
                                     degenerate=bool(degen))
    if buf.read(1):
        raise ValueError("trailing bytes after plan")
    return ExecutionPlan(params=params, nodes=nodes, inputs=inputs,
                         outputs=outputs, seq_len=seq_len, qparams=qparams,
                         has_float_semantics=False)


def serialize_plan_set(plans: list[ExecutionPlan]) -> bytes:
    """Container holding one plan per sequence position."""
    out = io.BytesIO()
    out.write(PLAN_MAGIC)
    out.write(struct.pack("<I", PLAN_VERSION))
    if not plans:
        raise ValueError("empty plan set")
    out.write(plans[0].params.fingerprint())
    out.write(struct.pack("<I", len(plans)))
    for plan in plans:
        blob = serialize_plan(plan)
        out.write(struct.pack("<Q", len(blob)))
        out.write(blob)
    return out.getvalue()


def deserialize_plan_set(raw: bytes, params: CryptoParams) -> list[ExecutionPlan]:
    buf = io.BytesIO(raw)
    if buf.read(4) != PLAN_MAGIC:
        raise ValueError("not a plan-set blob (bad magic)")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != PLAN_VERSION:
        raise ValueError(f"unsupported plan version {version}")
    if buf.read(32) != params.fingerprint():
        raise ValueError("plan set was compiled for different crypto parameters")
    (count,) = struct.unpack("<I", buf.read(4))
    plans = []
    for _ in range(count):
        (n,) = struct.unpack("<Q", buf.read(8))
        plans.append(deserialize_plan(buf.read(n), params))
    if buf.read(1):
        raise ValueError("trailing bytes after plan set")
    return plans


# ---------------------------------------------------------------------------
# Plan cache
# ---------------------------------------------------------------------------

class PlanCache:
    """Compile-once cache with optional on-disk persistence.

    Keys are content digests supplied by the caller (weights, calibration,
    config, crypto fingerprint). `compiles` and `hits` make "the second
    run did not recompile" directly testable.
    """

    def __init__(self, directory: str | None = None):
        self.directory = directory
        self._mem: dict[str, list[ExecutionPlan]] = {}
        self.compiles = 0
        self.hits = 0
        if directory:
            os.makedirs(directory, exist_ok=True)

    @staticmethod
    def digest(*parts: bytes) -> str:
        h = hashlib.sha256()
        for part in parts:
            h.update(struct.pack("<Q", len(part)))
            h.update(part)
        return h.hexdigest()

    def _path(self, key: str) -> str:
        assert self.directory is not None
        return os.path.join(self.directory, key + ".pqpl")

    def get_or_compile(self, key: str, params: CryptoParams, build, clock=None):
        """Return (plans, compile_seconds, from_cache)."""
        clock = clock if clock is not None else time.perf_counter
        if key in self._mem:
            self.hits += 1
            return self._mem[key], 0.0, True
        if self.directory:
            path = self._path(key)
            if os.path.exists(path):
                with open(path, "rb") as fh:
                    plans = deserialize_plan_set(fh.read(), params)
                self._mem[key] = plans
                self.hits += 1
                return plans, 0.0, True
        t0 = clock()
        plans = build()
        dt = clock() - t0
        self.compiles += 1
        self._mem[key] = plans
        if self.directory:
            with open(self._path(key), "wb") as fh:
                fh.write(serialize_plan_set(plans))
        return plans, dt, False
