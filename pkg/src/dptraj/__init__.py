"""Differentially private continuous-time synthetic trajectory generation."""

from .core import (ParticleSystem, Phase, RunConfig, TemporalDataset,
                   TimeGrid, TrajectorySet, derive_rng, validate_dataset)

__all__ = [
    "ParticleSystem",
    "Phase",
    "RunConfig",
    "TemporalDataset",
    "TimeGrid",
    "TrajectorySet",
    "derive_rng",
    "validate_dataset",
]

__version__ = "0.1.0"
