"""Skill refiner: collision-minimal optimization, contact filter, IG selection."""

from .collision import (
    NeighborhoodSearch,
    RefinedKeypoints,
    RefinedTrajectory,
    refine_grounded_trajectory,
    refine_transferred_keypoints,
)
from .filter import (
    DEFAULT_PARTICLES,
    ContactMeasurement,
    NoiseConfig,
    ParticleSet,
    RelativePoseError,
    contact_likelihood,
    effective_sample_size,
    end_effector_target,
    filter_estimate,
    filter_init,
    filter_predict,
    filter_update,
    resample,
    state_entropy,
    weight_entropy,
)
from .loop import RefinementConfig, RefinementResult, StepDiagnostics, run_refinement
from .strategy import (
    ContactStrategy,
    StrategySelection,
    information_gain,
    sample_contact_candidates,
    select_contact_strategy,
)

__all__ = [
    "NoiseConfig",
    "RelativePoseError",
    "ParticleSet",
    "ContactMeasurement",
    "contact_likelihood",
    "filter_init",
    "filter_predict",
    "filter_update",
    "filter_estimate",
    "resample",
    "effective_sample_size",
    "weight_entropy",
    "state_entropy",
    "end_effector_target",
    "DEFAULT_PARTICLES",
    "ContactStrategy",
    "StrategySelection",
    "information_gain",
    "sample_contact_candidates",
    "select_contact_strategy",
    "NeighborhoodSearch",
    "RefinedTrajectory",
    "RefinedKeypoints",
    "refine_grounded_trajectory",
    "refine_transferred_keypoints",
    "RefinementConfig",
    "RefinementResult",
    "StepDiagnostics",
    "run_refinement",
]
