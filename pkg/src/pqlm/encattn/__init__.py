"""Encrypted attention: configuration, calibration, and the hybrid model."""
from .calibration import (
    CalibrationError,
    CalibrationRecord,
    CalibrationTable,
    calibrate_block,
)
from .config import (
    EncAttnConfig,
    FheMode,
    HEAD_SCOPE_ALL,
    HEAD_SCOPE_SINGLE,
)
from .hybrid import GenerationResult, HybridModel, StepRecord

__all__ = [
    "CalibrationError",
    "CalibrationRecord",
    "CalibrationTable",
    "EncAttnConfig",
    "FheMode",
    "GenerationResult",
    "HEAD_SCOPE_ALL",
    "HEAD_SCOPE_SINGLE",
    "HybridModel",
    "StepRecord",
    "calibrate_block",
]
