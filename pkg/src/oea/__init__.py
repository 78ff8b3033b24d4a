"""Batch-aware mixture-of-experts routing with piggybacking, plus a decode
latency model and simulation harness."""

from oea.latency import (
    FitResult,
    LatencyObservation,
    LatencyParams,
    estimate_speedup,
    expected_active_experts,
    expert_latency,
    fit_linear,
    moe_latency,
)
from oea.routing import (
    CapSemantics,
    DegenerateWeightsError,
    InvalidInputError,
    Mode,
    PlanBatch,
    RoutingConfig,
    RoutingPlan,
    ScoreMatrix,
    batch_stats,
    phase1_baseline,
    phase2_piggyback,
    route,
    route_batch,
    route_topk,
    sort_experts,
)

__version__ = "0.1.0"

__all__ = [
    "CapSemantics",
    "DegenerateWeightsError",
    "FitResult",
    "InvalidInputError",
    "LatencyObservation",
    "LatencyParams",
    "Mode",
    "PlanBatch",
    "RoutingConfig",
    "RoutingPlan",
    "ScoreMatrix",
    "batch_stats",
    "estimate_speedup",
    "expected_active_experts",
    "expert_latency",
    "fit_linear",
    "moe_latency",
    "phase1_baseline",
    "phase2_piggyback",
    "route",
    "route_batch",
    "route_topk",
    "sort_experts",
]
