"""Toy experiments: synthetic data, a small segmenter, training and the CLI."""

from .config import ExperimentConfig, load_config, preset
from .segmenter import FisheyeSegmenter

__all__ = ["ExperimentConfig", "FisheyeSegmenter", "load_config", "preset"]
