"""Deterministic simulator for federated optimization under intermittent client availability."""

from .core import (
    AutoRateExceedsCap,
    BoundInputs,
    FedSimError,
    MetricRecord,
    RangeError,
    RunConfig,
    SchemaError,
    derive_stream,
    resolve_learning_rate,
)

__version__ = "0.1.0"

__all__ = [
    "AutoRateExceedsCap",
    "BoundInputs",
    "FedSimError",
    "MetricRecord",
    "RangeError",
    "RunConfig",
    "SchemaError",
    "derive_stream",
    "resolve_learning_rate",
]
