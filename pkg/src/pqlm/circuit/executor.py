"""One plan walker, three value domains.

* `IntBackend`   — signed integer codes; bit-exact mirror of the
  encrypted execution (simulate mode). Optionally asserts every node
  stays inside its static interval.
* `FheBackend`   — LWE ciphertexts driven by a bootstrap backend; codes
  are carried mod p' and the ciphertext plaintext-space tag is pinned to
  the widened space after every operation.
* `FloatBackend` — the ideal real-valued semantics recorded at build
  time (exact weights, exact tables' target functions). Only available
  on freshly built plans; serialized plans drop callables.

The walker itself is `run_plan`; it never branches on the mode beyond
dispatching node evaluation to the backend.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

from ..fhe.lwe import LweCiphertext, add_clear, add_ct, mul_pt, trivial_encrypt
from ..fhe.pbs import PbsBackendBase
from ..fhe.params import CryptoParams
from .compile import ExecutionPlan
from .graph import (
    KIND_CONST,
    KIND_INPUT,
    KIND_LINEAR,
    KIND_LUT,
    KIND_MUL,
    Node,
    signed_code,
)


@dataclass
class RunResult:
    outputs: dict[str, Any]
    node_values: list[Any] | None
    pbs_used: int


class IntBackend:
    """Plain signed-code evaluation (simulate mode)."""

    name = "int"

    def __init__(self, params: CryptoParams, check_intervals: bool = True):
        self.params = params
        self.check_intervals = check_intervals

    def _checked(self, node: Node, value: int) -> int:
        if self.check_intervals and not (node.interval[0] <= value <= node.interval[1]):
            raise AssertionError(
                f"node {node.label or node.nid} value {value} escapes "
                f"interval {node.interval}")
        return value

    def input_value(self, node: Node, supplied: int) -> int:
        return self._checked(node, int(supplied))

    def const(self, node: Node) -> int:
        return self._checked(node, node.const_code)

    def linear(self, node: Node, operands: list[int]) -> int:
        acc = node.bias
        for k, v in zip(node.coeffs, operands):
            acc += k * v
        return self._checked(node, acc)

    def mul(self, node: Node, a: int, b: int) -> int:
        return self._checked(node, a * b)

    def lut(self, node: Node, operand: int) -> int:
        assert node.lut is not None
        bits = node.lut.input_bits
        phys = node.lut.entries[operand % (1 << bits)]
        return self._checked(node, signed_code(phys, bits))

    def pbs_used(self, plan: ExecutionPlan) -> int:
        return plan.pbs_count


class FloatBackend:
    """Ideal real-valued evaluation of the same dataflow."""

    name = "float"

    def __init__(self, params: CryptoParams):
        self.params = params

    def input_value(self, node: Node, supplied: float) -> float:
        return float(supplied)

    def const(self, node: Node) -> float:
        return node.const_code * node.scale

    def linear(self, node: Node, operands: list[float]) -> float:
        acc = node.float_bias
        for w, v in zip(node.float_weights, operands):
            acc += w * v
        return acc

    def mul(self, node: Node, a: float, b: float) -> float:
        return a * b

    def lut(self, node: Node, operand: float) -> float:
        if node.float_fn is None:
            raise ValueError(
                "plan has no real-valued semantics (loaded from bytes?); "
                "rebuild the plan to run the float backend")
        return node.float_fn(operand)

    def pbs_used(self, plan: ExecutionPlan) -> int:
        return plan.pbs_count


class FheBackend:
    """Encrypted evaluation through a bootstrap backend."""

    name = "fhe"

    def __init__(self, pbs_backend: PbsBackendBase, params: CryptoParams):
        self.backend = pbs_backend
        self.params = params
        self.space = params.plaintext_space_bits

    def _pin(self, ct: LweCiphertext) -> LweCiphertext:
        if ct.plaintext_space == self.space:
            return ct
        return replace(ct, plaintext_space=self.space)

    def input_value(self, node: Node, supplied: LweCiphertext) -> LweCiphertext:
        if not isinstance(supplied, LweCiphertext):
            raise TypeError(f"input {node.label!r} must be a ciphertext")
        return self._pin(supplied)

    def const(self, node: Node) -> LweCiphertext:
        return trivial_encrypt(node.const_code % (1 << self.space),
                               self.params, self.space)

    def linear(self, node: Node, operands: list[LweCiphertext]) -> LweCiphertext:
        acc: LweCiphertext | None = None
        for k, ct in zip(node.coeffs, operands):
            if k == 0:
                continue
            term = mul_pt(ct, k) if k != 1 else ct
            acc = term if acc is None else add_ct(acc, term)
        if acc is None:
            acc = trivial_encrypt(0, self.params, self.space)
        if node.bias:
            acc = add_clear(self._pin(acc), node.bias % (1 << self.space))
        return self._pin(acc)

    def mul(self, node: Node, a: LweCiphertext, b: LweCiphertext) -> LweCiphertext:
        return self._pin(self.backend.mul_ct(self._pin(a), self._pin(b), signed=True))

    def lut(self, node: Node, operand: LweCiphertext) -> LweCiphertext:
        assert node.lut is not None
        return self._pin(self.backend.pbs(self._pin(operand), node.lut))

    def pbs_used(self, plan: ExecutionPlan) -> int:
        raise NotImplementedError  # read the live counter instead


def run_plan(plan: ExecutionPlan, inputs: dict[str, Any], backend,
             keep_node_values: bool = False) -> RunResult:
    """Evaluate a plan; `inputs` maps input labels to backend values."""
    missing = set(plan.inputs) - set(inputs)
    if missing:
        raise KeyError(f"missing plan inputs: {sorted(missing)}")
    values: list[Any] = [None] * len(plan.nodes)
    input_by_nid = {nid: label for label, nid in plan.inputs.items()}
    counter = getattr(getattr(backend, "backend", None), "counter", None)
    start = counter.value if counter is not None else 0
    for node in plan.nodes:
        if node.kind == KIND_INPUT:
            values[node.nid] = backend.input_value(node, inputs[input_by_nid[node.nid]])
        elif node.kind == KIND_CONST:
            values[node.nid] = backend.const(node)
        elif node.kind == KIND_LINEAR:
            values[node.nid] = backend.linear(node, [values[i] for i in node.inputs])
        elif node.kind == KIND_MUL:
            values[node.nid] = backend.mul(node, values[node.inputs[0]],
                                           values[node.inputs[1]])
        elif node.kind == KIND_LUT:
            values[node.nid] = backend.lut(node, values[node.inputs[0]])
        else:  # pragma: no cover
            raise ValueError(f"unknown node kind {node.kind}")
    if counter is not None:
        used = counter.value - start
    else:
        used = backend.pbs_used(plan)
    outputs = {label: values[nid] for label, nid in plan.outputs.items()}
    return RunResult(outputs=outputs,
                     node_values=values if keep_node_values else None,
                     pbs_used=used)


def decode_output(ct_or_code: Any, node: Node, key_material=None) -> float:
    """Dequantize one plan output to a real value."""
    if isinstance(ct_or_code, LweCiphertext):
        if key_material is None:
            raise ValueError("decrypting an output needs key material")
        phys = key_material.decrypt(ct_or_code)
        code = signed_code(phys, ct_or_code.plaintext_space)
    else:
        code = int(ct_or_code)
    return code * node.scale


__all__ = [
    "IntBackend",
    "FloatBackend",
    "FheBackend",
    "RunResult",
    "run_plan",
    "decode_output",
]
