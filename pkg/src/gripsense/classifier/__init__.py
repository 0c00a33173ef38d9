"""CNN handheld/handsfree classifier and its training, storage and fusion."""

from .fusion import FusedDecision, fuse
from .layers import ConvSpec, conv_output_dims
from .model import HANDHELD_CLASS, HANDSFREE_CLASS, Architecture, CnnModel, loss
from .serialize import load_model, model_bytes, save_model
from .training import Adam, TrainConfig, TrainResult, train

__all__ = [
    "Adam", "Architecture", "CnnModel", "ConvSpec", "FusedDecision", "HANDHELD_CLASS",
    "HANDSFREE_CLASS", "TrainConfig", "TrainResult", "conv_output_dims", "fuse", "load_model",
    "loss", "model_bytes", "save_model", "train",
]
