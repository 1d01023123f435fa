"""Dense patch sampling and feature extraction into patch-feature files."""

from .errors import ConfigError, ExtractError, ModelLoadError
from .extract import discover_images, extract_dataset
from .model import ProjectionModel, fallback_model, load_model
from .sampling import SamplingSpec, plan_patches
from .store import Record, write_features

__all__ = [
    "ConfigError",
    "ExtractError",
    "ModelLoadError",
    "ProjectionModel",
    "Record",
    "SamplingSpec",
    "discover_images",
    "extract_dataset",
    "fallback_model",
    "load_model",
    "plan_patches",
    "write_features",
]
