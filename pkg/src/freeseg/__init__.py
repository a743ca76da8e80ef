"""Training-free open-vocabulary segmentation from frozen-model features."""

from .config import PipelineConfig, load_config
from .pipeline import PipelineResult, segment_image

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "load_config", "PipelineResult", "segment_image", "__version__"]
