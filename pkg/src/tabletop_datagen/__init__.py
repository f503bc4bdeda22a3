"""Procedural tabletop scenes, grounded skill plans and critic-verified trajectory datasets."""

from .config import PipelineConfig
from .pipeline import compare_modes, generate_dataset, run_episode

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "compare_modes", "generate_dataset", "run_episode"]
