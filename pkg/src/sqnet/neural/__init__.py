"""Minimal reverse-mode engine for residual fully-connected networks."""

from .layers import (
    GELU,
    BatchNorm,
    Cos,
    CosRelu,
    Layer,
    LayerNorm,
    Linear,
    ReLU,
    Residual,
    Scale,
    Sigmoid,
    Tanh,
)
from .mlp import Mlp, residual_block
from .optim import AdamState, SgdState, adam_step, sgd_step
from .train import MetaTrainResult, TrainConfig, bce_loss, l1_loss, meta_train, mse_loss, pool_sets

__all__ = [
    "Layer", "Linear", "BatchNorm", "LayerNorm", "ReLU", "GELU", "Tanh", "Sigmoid", "Cos",
    "CosRelu", "Scale", "Residual", "Mlp", "residual_block", "AdamState", "SgdState",
    "adam_step", "sgd_step", "TrainConfig", "MetaTrainResult", "meta_train", "pool_sets",
    "l1_loss", "mse_loss", "bce_loss",
]
