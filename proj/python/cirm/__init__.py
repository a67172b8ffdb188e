"""Concept bottleneck/embedding models with test-time interventions and a
trainable concept realigner. Thin layer over the compiled ``_cirm`` module."""

from ._cirm import (
    CirmError,
    Experiment,
    IoError,
    Model,
    Realigner,
    SessionManager,
    ShapeError,
    StateError,
    ValueError,
    World,
    auc,
    default_experiment_config,
    evaluate_curves,
    run_ablation,
    run_benchmark,
    run_trajectory,
)

__all__ = [
    "CirmError",
    "Experiment",
    "IoError",
    "Model",
    "Realigner",
    "SessionManager",
    "ShapeError",
    "StateError",
    "ValueError",
    "World",
    "auc",
    "default_experiment_config",
    "evaluate_curves",
    "run_ablation",
    "run_benchmark",
    "run_trajectory",
]
