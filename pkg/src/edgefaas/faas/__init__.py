"""Serverless gateway and the built-in benchmark workloads."""

from .gateway import (
    AutoscaleConfig,
    DuplicateFunction,
    FunctionSpec,
    Gateway,
    InvocationRecord,
    Outcome,
    Replica,
    ScalingAction,
    UnknownFunction,
    WorkloadKind,
)
from .workloads import EmptyLabels, run_heavy_classify, run_sentiment

__all__ = [
    "AutoscaleConfig", "DuplicateFunction", "EmptyLabels", "FunctionSpec", "Gateway",
    "InvocationRecord", "Outcome", "Replica", "ScalingAction", "UnknownFunction", "WorkloadKind",
    "run_heavy_classify", "run_sentiment",
]
