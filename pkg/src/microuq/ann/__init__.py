"""Small numpy deep-learning engine for the homogenization surrogate."""

import numpy as np

from .checkpoint import from_bytes, load, save, to_bytes
from .layers import Concat, Conv3D, Dense, Dropout, Flatten, Layer, MaxPool3D, ReLU, Standardize
from .network import Network, TrainingMeta, alexnet_lite, forward, l2_penalty
from .optim import AdamState, adam_amsgrad_step, sgd_step
from .train import (
    ArrayData,
    HpResult,
    HpSearchSpace,
    HpTrial,
    TrainConfig,
    evaluate,
    fit_standardizers,
    gradients,
    hp_random_search,
    loss,
    train,
)


def init_glorot(net: Network, seed: int) -> Network:
    """Fresh Glorot-uniform weights (zero biases), deterministic per seed."""
    net.build(np.random.Generator(np.random.PCG64(seed)))
    return net


__all__ = [
    "AdamState", "ArrayData", "Concat", "Conv3D", "Dense", "Dropout", "Flatten", "HpResult",
    "HpSearchSpace", "HpTrial", "Layer", "MaxPool3D", "Network", "ReLU", "Standardize",
    "TrainConfig", "TrainingMeta", "adam_amsgrad_step", "alexnet_lite", "evaluate",
    "fit_standardizers", "forward", "from_bytes", "gradients", "hp_random_search",
    "init_glorot", "l2_penalty", "load", "loss", "save", "sgd_step", "to_bytes", "train",
]
