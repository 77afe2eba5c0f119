"""Experiment orchestration: config, metrics, trial protocol, CLI."""

from .config import ExperimentConfig, ValidationError, DEFAULTS
from .metrics import MetricsReport, wilson_interval
from .protocol import (CriticPolicy, OracleScorerPolicy, RandomPolicy,
                       eval_grasp_protocol)

__all__ = [
    "ExperimentConfig", "ValidationError", "DEFAULTS",
    "MetricsReport", "wilson_interval",
    "CriticPolicy", "OracleScorerPolicy", "RandomPolicy", "eval_grasp_protocol",
]
