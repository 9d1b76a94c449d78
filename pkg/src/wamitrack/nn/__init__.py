"""Minimal CNN engine: layers, network, SGD, weight files."""
from .architectures import classification_net, regression_net
from .layers import BatchNorm, Conv2d, FullyConnected, MaxPool2, ReLU, Sigmoid, Softmax
from .network import Network, numeric_gradient_check, numeric_input_gradient_check, sgd_step
from .serialize import (WeightsFormatError, WeightsTruncatedError, load_weights, read_weights,
                        save_weights, write_weights)
from .train import TrainConfig, train, write_training_log

__all__ = [
    "BatchNorm", "Conv2d", "FullyConnected", "MaxPool2", "ReLU", "Sigmoid", "Softmax",
    "Network", "sgd_step", "numeric_gradient_check", "numeric_input_gradient_check",
    "classification_net", "regression_net",
    "save_weights", "load_weights", "write_weights", "read_weights",
    "WeightsFormatError", "WeightsTruncatedError",
    "TrainConfig", "train", "write_training_log",
]
