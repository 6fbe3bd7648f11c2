"""Toy lattice FHE core: LWE ciphertexts, noise ledger, bootstrap engine.

Parameters are deliberately small for desk-scale experiments and provide
no real security; the algebra, noise accounting, and operation costs are
the honest article.
"""
from .keys import (
    ROLE_CLIENT_SECRET,
    ROLE_SERVER_EVALUATION,
    BudgetExhaustedError,
    EvalKey,
    KeyMaterial,
    KeySwitchKey,
    apply_keyswitch,
    deserialize_eval_key,
    deserialize_key_material,
    generate_key_material,
    keyswitch_ct,
    make_eval_key,
    round_message,
    serialize_eval_key,
    serialize_key_material,
)
from .ledger import NoiseEstimate
from .lut import LookupTable
from .lwe import (
    LweCiphertext,
    add_clear,
    add_ct,
    ciphertext_byte_size,
    deserialize_ciphertext,
    mul_pt,
    serialize_ciphertext,
    sub_ct,
    trivial_encrypt,
)
from .params import MASK64, Q, CryptoParams, micro_params, toy_params
from .pbs import (
    BlindRotateBackend,
    EscrowBackend,
    PbsBackendBase,
    PbsCounter,
    make_mul_tables,
)

__all__ = [
    "ROLE_CLIENT_SECRET",
    "ROLE_SERVER_EVALUATION",
    "BudgetExhaustedError",
    "EvalKey",
    "KeyMaterial",
    "KeySwitchKey",
    "apply_keyswitch",
    "deserialize_eval_key",
    "deserialize_key_material",
    "generate_key_material",
    "keyswitch_ct",
    "make_eval_key",
    "round_message",
    "serialize_eval_key",
    "serialize_key_material",
    "NoiseEstimate",
    "LookupTable",
    "LweCiphertext",
    "add_clear",
    "add_ct",
    "ciphertext_byte_size",
    "deserialize_ciphertext",
    "mul_pt",
    "serialize_ciphertext",
    "sub_ct",
    "trivial_encrypt",
    "MASK64",
    "Q",
    "CryptoParams",
    "micro_params",
    "toy_params",
    "BlindRotateBackend",
    "EscrowBackend",
    "PbsBackendBase",
    "PbsCounter",
    "make_mul_tables",
]
