"""Generative execution profiles from a conditional multimarginal Schrodinger bridge."""

from .core import (
    Dataset,
    DatasetError,
    EmpiricalMarginal,
    ProfileRecord,
    ScalingRecord,
    build_augmented_samples,
    build_empirical_marginals,
    load_dataset,
    scale_marginals,
    write_dataset,
)
from .cost import build_path_cost, materialize_dense
from .evaluation import (
    AccuracyReport,
    accuracy_report,
    baseline_profile,
    dtw_distance,
    normalized_dtw,
)
from .generator import (
    ConditionalBridge,
    SyntheticProfile,
    WeightedCloud,
    condition_on_context,
    fit_bridge,
    generate_profile,
    interpolate_joint,
)
from .solver import SolverConfig, SolverSolution, hilbert_metric, sinkhorn_solve
from .workloadsim import PhaseModel, default_model, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "ConditionalBridge",
    "Dataset",
    "DatasetError",
    "EmpiricalMarginal",
    "PhaseModel",
    "ProfileRecord",
    "ScalingRecord",
    "SolverConfig",
    "SolverSolution",
    "SyntheticProfile",
    "WeightedCloud",
    "accuracy_report",
    "baseline_profile",
    "build_augmented_samples",
    "build_empirical_marginals",
    "build_path_cost",
    "condition_on_context",
    "default_model",
    "dtw_distance",
    "fit_bridge",
    "generate_profile",
    "hilbert_metric",
    "interpolate_joint",
    "load_dataset",
    "materialize_dense",
    "normalized_dtw",
    "scale_marginals",
    "simulate_dataset",
    "sinkhorn_solve",
    "write_dataset",
]
