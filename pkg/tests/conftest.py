"""Shared fixtures: micro-profile crypto objects and a tiny hybrid model.

Everything expensive (key generation, evaluation keys, compiled plans)
is session-scoped. The bootstrap backends carry shared counters, so
count-sensitive tests must measure counter deltas, never absolute
values. Hybrid models built through ``hybrid_factory`` share one plan
cache, so identical configurations compile exactly once per session.
"""
from __future__ import annotations

import pytest

from pqlm.circuit.compile import PlanCache
from pqlm.encattn.calibration import CalibrationTable, calibrate_block
from pqlm.encattn.config import (
    HEAD_SCOPE_ALL,
    HEAD_SCOPE_SINGLE,
    EncAttnConfig,
    FheMode,
)
from pqlm.encattn.hybrid import HybridModel
from pqlm.fhe.keys import generate_key_material, make_eval_key
from pqlm.fhe.params import micro_params
from pqlm.fhe.pbs import BlindRotateBackend, EscrowBackend
from pqlm.model.config import ModelConfig
from pqlm.model.io import encode_text, load_prompts
from pqlm.model.weights import init_weights

PROMPT_CAP = 4  # prompt tokens per sequence in hybrid-generation tests
HORIZON = 2  # generated tokens in hybrid-generation tests
MAX_POSITIONS = PROMPT_CAP + HORIZON


@pytest.fixture(scope="session")
def micro():
    return micro_params()


@pytest.fixture(scope="session")
def km(micro):
    return generate_key_material(micro)


@pytest.fixture(scope="session")
def blind(km):
    return BlindRotateBackend(make_eval_key(km))


@pytest.fixture(scope="session")
def escrow(km):
    return EscrowBackend(km)


@pytest.fixture(scope="session")
def weights():
    return init_weights(ModelConfig())


@pytest.fixture(scope="session")
def corpus_tokens():
    return [encode_text(p)[:PROMPT_CAP] for p in load_prompts()[:24]]


@pytest.fixture(scope="session")
def shared_cache():
    return PlanCache()


def make_enc(mode, scope=HEAD_SCOPE_SINGLE, n_bits=2, layers=(0,)):
    return EncAttnConfig(mode=mode, target_layers=tuple(layers),
                         head_scope=scope, n_bits=n_bits,
                         crypto=micro_params())


@pytest.fixture(scope="session")
def calibration_for(weights, corpus_tokens):
    """Scope-keyed calibration tables, computed once per head scope."""
    tables: dict[tuple, CalibrationTable] = {}

    def get(scope=HEAD_SCOPE_SINGLE, layers=(0,)) -> CalibrationTable:
        key = (scope, tuple(layers))
        if key not in tables:
            enc = make_enc(FheMode.SIMULATE, scope=scope, layers=layers)
            tables[key] = calibrate_block(weights, enc, corpus_tokens)
        return tables[key]

    return get


@pytest.fixture(scope="session")
def hybrid_factory(weights, shared_cache, calibration_for, km):
    """Build hybrid models against the shared plan cache and keys."""

    def make(mode, *, scope=HEAD_SCOPE_SINGLE, n_bits=2, layers=(0,),
             use_escrow=False, max_positions=MAX_POSITIONS, clock=None):
        enc = make_enc(mode, scope=scope, n_bits=n_bits, layers=layers)
        calibration = None
        key_material = None
        if mode != FheMode.DISABLE:
            calibration = calibration_for(scope, layers)
        if mode == FheMode.EXECUTE:
            key_material = km
        return HybridModel(weights, enc, calibration=calibration,
                           key_material=key_material, plan_cache=shared_cache,
                           max_positions=max_positions, use_escrow=use_escrow,
                           clock=clock)

    return make


__all__ = [
    "HEAD_SCOPE_ALL",
    "HEAD_SCOPE_SINGLE",
    "HORIZON",
    "MAX_POSITIONS",
    "PROMPT_CAP",
    "make_enc",
]
