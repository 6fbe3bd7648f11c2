"""Static circuit compilation: graphs, bootstrap placement, execution."""
from .attention_graph import (
    build_attention_plans,
    build_graph,
    derive_plan_qparams,
)
from .compile import (
    CompileError,
    ExecutionPlan,
    PlanCache,
    deserialize_plan,
    deserialize_plan_set,
    place_pbs,
    serialize_plan,
    serialize_plan_set,
)
from .executor import (
    FheBackend,
    FloatBackend,
    IntBackend,
    RunResult,
    decode_output,
    run_plan,
)
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
    signed_code,
)

__all__ = [
    "CompileError",
    "ExecutionPlan",
    "FheBackend",
    "FloatBackend",
    "GraphBuilder",
    "INPUT_CARRIED",
    "INPUT_FRESH",
    "IntBackend",
    "KIND_CONST",
    "KIND_INPUT",
    "KIND_LINEAR",
    "KIND_LUT",
    "KIND_MUL",
    "Node",
    "PlanCache",
    "RunResult",
    "build_attention_plans",
    "build_graph",
    "decode_output",
    "derive_plan_qparams",
    "deserialize_plan",
    "deserialize_plan_set",
    "place_pbs",
    "run_plan",
    "serialize_plan",
    "serialize_plan_set",
    "signed_code",
]
