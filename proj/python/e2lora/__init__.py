"""Energy-structured LoRA continual learning (C++ core)."""

from ._core import (
    DivergenceError,
    Error,
    StateError,
    ValidationError,
    ce_loss,
    distill_loss,
    energy_curve,
    energy_transform,
    min_rank,
    orthonormalize,
    output_drift,
    plan_allocation,
    retained_rank_for,
    run,
    thin_svd,
    total_loss,
    verify,
)

__all__ = [
    "DivergenceError",
    "Error",
    "StateError",
    "ValidationError",
    "ce_loss",
    "distill_loss",
    "energy_curve",
    "energy_transform",
    "min_rank",
    "orthonormalize",
    "output_drift",
    "plan_allocation",
    "retained_rank_for",
    "run",
    "thin_svd",
    "total_loss",
    "verify",
]
