"""Dynamics-driven actuator grouping and grouped-action RL for tendon-driven systems."""

__version__ = "0.1.0"

from dynsyn.muscle import MuscleParams, MuscleState
from dynsyn.plant import PlantModel, PlantState
from dynsyn.models import builtin_models, load_model, save_model
from dynsyn.synergy import (
    CorrelationResult,
    GroupingResult,
    KMedoids,
    PerturbationConfig,
    SynergyGrouping,
    TrajectoryBuffer,
    correlation_matrix,
    generate_trajectory,
    grouping_distance,
    grouping_probability,
    kmedoids,
    select_group_count,
)

__all__ = [
    "MuscleParams",
    "MuscleState",
    "PlantModel",
    "PlantState",
    "builtin_models",
    "load_model",
    "save_model",
    "CorrelationResult",
    "GroupingResult",
    "KMedoids",
    "PerturbationConfig",
    "SynergyGrouping",
    "TrajectoryBuffer",
    "correlation_matrix",
    "generate_trajectory",
    "grouping_distance",
    "grouping_probability",
    "kmedoids",
    "select_group_count",
]
