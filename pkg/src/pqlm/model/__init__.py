"""Toy decoder-only transformer: the clear reference and splice host."""
from .config import GenerationConfig, ModelConfig, kv_group_of_head
from .decoder import (
    Decoder,
    GenerationStep,
    KvCache,
    attention,
    generate,
    rms_norm,
    rope_matrix,
    rope_rotate,
    select_token,
    silu,
    softmax,
    top_k_candidates,
)
from .io import decode_tokens, encode_text, load_prompts
from .weights import (
    LayerWeights,
    Weights,
    init_weights,
    load_weights,
    save_weights,
    tensor_order,
)

__all__ = [
    "GenerationConfig", "ModelConfig", "kv_group_of_head",
    "Decoder", "GenerationStep", "KvCache", "attention", "generate",
    "rms_norm", "rope_matrix", "rope_rotate", "select_token", "silu",
    "softmax", "top_k_candidates",
    "decode_tokens", "encode_text", "load_prompts",
    "LayerWeights", "Weights", "init_weights", "load_weights",
    "save_weights", "tensor_order",
]
