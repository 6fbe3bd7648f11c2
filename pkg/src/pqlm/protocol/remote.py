"""A hybrid model whose encrypted attention runs on a remote server.

The client keeps the plain layers, the secret key, and the compiled
plans; the server gets the evaluation key and the plan set during the
handshake and then evaluates one position per ciphertext batch. The
carried key/value ciphertexts never leave the server.

One target layer only: the wire session tracks a single plan sequence,
so the model is restricted to a single encrypted attention site.
"""
from __future__ import annotations

from typing import Any, Callable

import numpy as np

from ..encattn.calibration import CalibrationTable
from ..encattn.config import EncAttnConfig, FheMode
from ..encattn.hybrid import HybridModel, StepRecord
from ..fhe.keys import KeyMaterial
from ..model.weights import Weights
from .frames import Frame
from .session import ClientSession


class RemoteAttentionModel(HybridModel):
    """Execute-mode hybrid whose bootstraps happen on the other side."""

    def __init__(self, weights: Weights, enc_cfg: EncAttnConfig, *,
                 calibration: CalibrationTable,
                 key_material: KeyMaterial,
                 round_trip: Callable[[Frame], Frame],
                 max_positions: int | None = None,
                 plan_cache=None,
                 clock=None):
        if enc_cfg.mode != FheMode.EXECUTE:
            raise ValueError("remote attention requires execute mode")
        if len(enc_cfg.target_layers) != 1:
            raise ValueError("the wire protocol carries one target layer")
        # use_escrow avoids building a second local blind-rotate backend;
        # the local backend is never invoked for target layers.
        super().__init__(weights, enc_cfg, calibration=calibration,
                         key_material=key_material, plan_cache=plan_cache,
                         max_positions=max_positions, use_escrow=True,
                         clock=clock)
        self._round_trip = round_trip
        (layer,) = enc_cfg.target_layers
        self._layer = layer
        self.client = ClientSession(key_material, self.plans[layer])
        self.remote_pbs_total = 0
        self.remote_wall_total = 0.0
        self._handshaken = False

    def _ensure_handshake(self) -> None:
        if self._handshaken:
            return
        for frame in self.client.handshake_frames():
            self.client.expect_ack(self._round_trip(frame))
        self._handshaken = True

    def reset(self) -> None:
        super().reset()
        # a fresh sequence needs a fresh server plan state
        if getattr(self, "_handshaken", False):
            self.client.expect_ack(
                self._round_trip(self.client.handshake_frames()[1]))

    def _run_target_attention(self, layer: int, x_norm: np.ndarray,
                              position: int, record: StepRecord) -> np.ndarray:
        self._ensure_handshake()
        plan = self.plans[layer][position]
        reply = self._round_trip(self.client.batch_frame(position, x_norm))
        step = self.client.parse_result(reply)
        record.pbs_used += step.pbs_used
        self.remote_pbs_total += step.pbs_used
        self.remote_wall_total += step.wall_s
        d = self.cfg.d_emb
        out = np.array([step.values[f"out.{j}"] for j in range(d)])
        record.enc_out[layer] = out
        record.bound_out[layer] = np.array(
            [plan.output_deviation(f"out.{j}") for j in range(d)])
        out_nodes = [plan.nodes[plan.outputs[f"out.{j}"]] for j in range(d)]
        record.noise_over_delta[layer] = (
            max(n.noise.magnitude for n in out_nodes) / self.enc_cfg.crypto.delta)
        record.out_scale[layer] = plan.qparams["out"].scale
        return out
