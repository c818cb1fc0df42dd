"""Differentially private streaming k-clustering with continual release."""

from .geometry import WeightedSet, approx_cluster, brute_force_opt, cost
from .pipeline import Pipeline, PipelineConfig, finalize_centers, ring_of

__all__ = [
    "WeightedSet",
    "approx_cluster",
    "brute_force_opt",
    "cost",
    "Pipeline",
    "PipelineConfig",
    "finalize_centers",
    "ring_of",
]
