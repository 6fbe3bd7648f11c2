"""Client and server state machines for remote encrypted attention.

The server is structurally incapable of decrypting: its session object
is built from public parameters only, accepts an evaluation key (the
deserializer rejects key material tagged as a client secret), and all
it ever returns are ciphertexts plus operational counters. The client
keeps the secret key and never sends it.

Message order is enforced: a ciphertext batch before both the
evaluation key and the plan set is answered with an error frame, and
positions must arrive in sequence (each plan consumes the key/value
codes cached from the previous ones).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..circuit.compile import ExecutionPlan, deserialize_plan_set, serialize_plan_set
from ..circuit.executor import FheBackend, run_plan
from ..circuit.graph import signed_code
from ..fhe.keys import KeyMaterial, deserialize_eval_key, make_eval_key, serialize_eval_key
from ..fhe.lwe import deserialize_ciphertext, serialize_ciphertext
from ..fhe.params import CryptoParams
from ..fhe.pbs import BlindRotateBackend, PbsCounter
from ..quant import quantize
from .frames import (
    Frame,
    ProtocolError,
    TYPE_CIPHERTEXT_BATCH,
    TYPE_ERROR,
    TYPE_EVAL_KEY,
    TYPE_PLAN,
    TYPE_RESULT,
    pack_error,
    pack_labeled_blobs,
    pack_result,
    unpack_error,
    unpack_labeled_blobs,
    unpack_result,
)

ERR_BAD_ORDER = 1
ERR_BAD_PAYLOAD = 2
ERR_INTERNAL = 3


class ServerSession:
    """Evaluates plans over ciphertexts; holds no secrets."""

    def __init__(self, params: CryptoParams):
        self.params = params
        self.backend: FheBackend | None = None
        self.plans: list[ExecutionPlan] | None = None
        self.counter = PbsCounter()
        self._carried: dict[str, Any] = {}
        self._next_position = 0

    # -- frame dispatch ---------------------------------------------------

    def handle_frame(self, raw_frame: Frame) -> Frame:
        try:
            if raw_frame.type == TYPE_EVAL_KEY:
                return self._on_eval_key(raw_frame.payload)
            if raw_frame.type == TYPE_PLAN:
                return self._on_plan(raw_frame.payload)
            if raw_frame.type == TYPE_CIPHERTEXT_BATCH:
                return self._on_batch(raw_frame.payload)
            return Frame(TYPE_ERROR, pack_error(
                ERR_BAD_ORDER, f"server does not accept frame type {raw_frame.type}"))
        except ProtocolError as exc:
            return Frame(TYPE_ERROR, pack_error(ERR_BAD_PAYLOAD, str(exc)))
        except Exception as exc:  # noqa: BLE001 - wire boundary
            return Frame(TYPE_ERROR, pack_error(ERR_INTERNAL, str(exc)))

    def _on_eval_key(self, payload: bytes) -> Frame:
        eval_key = deserialize_eval_key(payload, self.params)
        self.backend = FheBackend(
            BlindRotateBackend(eval_key, counter=self.counter), self.params)
        return Frame(TYPE_RESULT, pack_result(0, {}, 0, 0.0))

    def _on_plan(self, payload: bytes) -> Frame:
        self.plans = deserialize_plan_set(payload, self.params)
        self._carried = {}
        self._next_position = 0
        return Frame(TYPE_RESULT, pack_result(0, {}, 0, 0.0))

    def _on_batch(self, payload: bytes) -> Frame:
        if self.backend is None:
            return Frame(TYPE_ERROR, pack_error(
                ERR_BAD_ORDER, "ciphertext batch before evaluation key"))
        if self.plans is None:
            return Frame(TYPE_ERROR, pack_error(
                ERR_BAD_ORDER, "ciphertext batch before plan set"))
        position, blobs = unpack_labeled_blobs(payload)
        if position != self._next_position:
            return Frame(TYPE_ERROR, pack_error(
                ERR_BAD_ORDER,
                f"expected position {self._next_position}, got {position}"))
        if position >= len(self.plans):
            return Frame(TYPE_ERROR, pack_error(
                ERR_BAD_ORDER, "position beyond the compiled plan horizon"))
        plan = self.plans[position]
        inputs: dict[str, Any] = {
            label: deserialize_ciphertext(blob, self.params)
            for label, blob in blobs.items()
        }
        inputs.update(self._carried)
        t0 = time.perf_counter()
        result = run_plan(plan, inputs, self.backend)
        wall = time.perf_counter() - t0
        out_blobs: dict[str, bytes] = {}
        for label, value in result.outputs.items():
            if label.startswith(("kcache.", "vcache.")):
                parts = label.split(".")
                carried = f"{label[0]}.t{position}.{parts[1]}.{parts[2]}"
                self._carried[carried] = value
            else:
                out_blobs[label] = serialize_ciphertext(value)
        self._next_position += 1
        return Frame(TYPE_RESULT,
                     pack_result(position, out_blobs, result.pbs_used, wall))


@dataclass
class StepResult:
    position: int
    values: dict[str, float]
    pbs_used: int
    wall_s: float


class ClientSession:
    """Owns the secret key; encodes inputs and decodes results."""

    def __init__(self, key_material: KeyMaterial, plans: list[ExecutionPlan]):
        self.km = key_material
        self.plans = plans
        self.params = key_material.params
        self._space = self.params.plaintext_space_bits

    # -- handshake ----------------------------------------------------------

    def handshake_frames(self) -> list[Frame]:
        return [
            Frame(TYPE_EVAL_KEY, serialize_eval_key(make_eval_key(self.km))),
            Frame(TYPE_PLAN, serialize_plan_set(self.plans)),
        ]

    # -- stepping -----------------------------------------------------------

    def batch_frame(self, position: int, x_row: np.ndarray) -> Frame:
        """Quantize, encrypt, and frame one input row."""
        plan = self.plans[position]
        qp = plan.qparams["x"]
        blobs: dict[str, bytes] = {}
        for j, value in enumerate(np.asarray(x_row, dtype=np.float64)):
            code = int(quantize(value, qp)) - qp.zero_point
            ct = self.km.encrypt(code % (1 << self._space),
                                 plaintext_space=self._space)
            blobs[f"x.{j}"] = serialize_ciphertext(ct)
        return Frame(TYPE_CIPHERTEXT_BATCH, pack_labeled_blobs(position, blobs))

    def parse_result(self, frame: Frame) -> StepResult:
        if frame.type == TYPE_ERROR:
            code, msg = unpack_error(frame.payload)
            raise ProtocolError(f"server error {code}: {msg}")
        if frame.type != TYPE_RESULT:
            raise ProtocolError(f"unexpected frame type {frame.type}")
        position, blobs, pbs_used, wall_s = unpack_result(frame.payload)
        plan = self.plans[position]
        values: dict[str, float] = {}
        for label, blob in blobs.items():
            ct = deserialize_ciphertext(blob, self.params)
            node = plan.nodes[plan.outputs[label]]
            code = signed_code(self.km.decrypt(ct), ct.plaintext_space)
            values[label] = code * node.scale
        return StepResult(position, values, pbs_used, wall_s)

    def expect_ack(self, frame: Frame) -> None:
        if frame.type == TYPE_ERROR:
            code, msg = unpack_error(frame.payload)
            raise ProtocolError(f"server error {code}: {msg}")
        if frame.type != TYPE_RESULT:
            raise ProtocolError(f"expected acknowledgement, got type {frame.type}")
