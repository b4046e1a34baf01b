"""Continuous cross-resolution change detection."""
from .model import ModelConfig, build_model
from .synthesis import BitemporalSample, SynthesisConfig

__version__ = "0.1.0"

__all__ = ["BitemporalSample", "ModelConfig", "SynthesisConfig", "build_model"]
