"""Staged command-line pipeline: ingest, split, augment, GAN training and
generation, classifier training, evaluation, interpretation and reporting."""

from .config import ConfigError, PipelineConfig, load_config
from .report import broken_links, make_report
from .stages import STAGES, IsolationError, run_stage
from .workspace import MissingInput, Workspace

__all__ = [
    "STAGES",
    "ConfigError",
    "IsolationError",
    "MissingInput",
    "PipelineConfig",
    "Workspace",
    "broken_links",
    "load_config",
    "make_report",
    "run_stage",
]
