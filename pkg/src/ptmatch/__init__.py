"""Point-cloud/text matching with dual attention pooling and a robust
negative contrastive loss, on a numpy reverse-mode autodiff kernel."""

from .dap import DapConfig, DapParams, TokenFeatures, embed, embed_many
from .errors import PtmError
from .rncl import LossConfig, find_threshold, rnc_per_pair
from .synthgen import GeneratorSpec, build_benchmark
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DapConfig", "DapParams", "TokenFeatures", "embed", "embed_many", "PtmError", "LossConfig",
    "find_threshold", "rnc_per_pair", "GeneratorSpec", "build_benchmark", "TrainConfig", "train",
]
