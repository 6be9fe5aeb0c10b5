"""Numpy tensor-core: layers, activations, losses, Adam and the weight file format."""
from src.engine.nn.activations import ACTIVATIONS, activate, activation_derivative
from src.engine.nn.layers import (
    LayerParams,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Upsample2D,
    conv2d_forward,
    conv2d_backward,
    conv_transpose2d_forward,
    conv_transpose2d_backward,
    dense_forward,
    dense_backward,
    upsample2d_forward,
    upsample2d_backward,
    conv_output_size,
)
from src.engine.nn.losses import LossReport, loss_mse_mae, mse_gradient
from src.engine.nn.optim import AdamOptimizer, adam_step

__all__ = [
    "ACTIVATIONS",
    "activate",
    "activation_derivative",
    "LayerParams",
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "Upsample2D",
    "conv2d_forward",
    "conv2d_backward",
    "conv_transpose2d_forward",
    "conv_transpose2d_backward",
    "dense_forward",
    "dense_backward",
    "upsample2d_forward",
    "upsample2d_backward",
    "conv_output_size",
    "LossReport",
    "loss_mse_mae",
    "mse_gradient",
    "AdamOptimizer",
    "adam_step",
]
