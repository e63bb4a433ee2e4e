"""Minimal reverse-mode autodiff engine: layers, networks, optimizers."""

from .layers import (BatchNorm, Conv2d, Dense, GlobalAvgPool2d, Layer,
                     Parameter, PowerNormalize, ReLU, ResidualUnit, Softmax,
                     glorot_uniform, he_uniform)
from .network import (LayerSpec, Network, batchnorm, build_network, conv2d,
                      dense, global_avg_pool2d, normalize_power, relu,
                      residual_unit, softmax)
from .optim import Adam, SgdMomentum
from .checkpoint import load_checkpoint, rng_from_json, rng_state_to_json, save_checkpoint
from .gradcheck import check_network, numeric_input_grad, numeric_param_grads, rel_error

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "Dense", "GlobalAvgPool2d", "Layer",
    "LayerSpec", "Network", "Parameter", "PowerNormalize", "ReLU",
    "ResidualUnit", "SgdMomentum", "Softmax", "batchnorm", "build_network",
    "check_network", "conv2d", "dense", "global_avg_pool2d", "glorot_uniform",
    "he_uniform", "load_checkpoint", "normalize_power", "numeric_input_grad",
    "numeric_param_grads", "rel_error", "relu", "residual_unit",
    "rng_from_json", "rng_state_to_json", "save_checkpoint", "softmax",
]
