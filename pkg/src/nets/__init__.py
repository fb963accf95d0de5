"""Model zoo: backbones and expert-model weight operations."""

from .backbones import ARCHITECTURES, Backbone, MLPBackbone, SmallConvNet, ResNet18
from .expert_model import (
    ExpertModel,
    FlatWeights,
    build_model,
    forward,
    to_tensor,
    clone,
    grow_head,
    average_weights,
    flatten,
    unflatten,
    save_checkpoint,
    load_checkpoint,
)

__all__ = [
    "ARCHITECTURES",
    "Backbone",
    "MLPBackbone",
    "SmallConvNet",
    "ResNet18",
    "ExpertModel",
    "FlatWeights",
    "build_model",
    "forward",
    "to_tensor",
    "clone",
    "grow_head",
    "average_weights",
    "flatten",
    "unflatten",
    "save_checkpoint",
    "load_checkpoint",
]
