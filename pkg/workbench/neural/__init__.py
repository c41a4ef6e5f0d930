from .checkpoints import load_network, network_from_dict, network_to_dict, save_network
from .layers import (
    LSTM,
    BiLSTM,
    Dense,
    Dropout,
    FixedAffine,
    Layer,
    Param,
    ReLU,
    Sigmoid,
    Softmax,
    Tanh,
    TimeDistributedDense,
)
from .losses import mse_loss, softmax_cross_entropy
from .network import ForwardCache, Network
from .optimizers import SGD, Adam, Optimizer, build_optimizer

__all__ = [
    "LSTM",
    "SGD",
    "Adam",
    "BiLSTM",
    "Dense",
    "Dropout",
    "FixedAffine",
    "ForwardCache",
    "Layer",
    "Network",
    "Optimizer",
    "Param",
    "ReLU",
    "Sigmoid",
    "Softmax",
    "Tanh",
    "TimeDistributedDense",
    "build_optimizer",
    "load_network",
    "mse_loss",
    "network_from_dict",
    "network_to_dict",
    "save_network",
    "softmax_cross_entropy",
]
