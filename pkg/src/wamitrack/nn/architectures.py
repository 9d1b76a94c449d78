"""The two detector networks.

Classification: 21x21x4 patch stack -> (o1, o2) softmax scores.
Regression: 45x45x4 patch stack -> 225 sigmoid outputs (a 15x15 response).
Batch normalisation follows every convolutional and fully connected layer
except the output layer.
"""
from __future__ import annotations

import numpy as np

from .layers import BatchNorm, Conv2d, FullyConnected, MaxPool2, ReLU, Sigmoid, Softmax
from .network import Network

__all__ = ["classification_net", "regression_net", "CLASSIFIER_SIDE", "REGRESSOR_SIDE",
           "RESPONSE_SIDE", "STACK_DEPTH"]

CLASSIFIER_SIDE = 21
REGRESSOR_SIDE = 45
RESPONSE_SIDE = 15
STACK_DEPTH = 4  # current frame plus three aligned predecessors


def classification_net(seed: int = 0, dtype=np.float32, channels=(16, 32), hidden: int = 64) -> Network:
    rng = np.random.default_rng(seed)
    c1, c2 = channels
    return Network([
        Conv2d(STACK_DEPTH, c1, 3, rng=rng, dtype=dtype), BatchNorm(c1, dtype=dtype), ReLU(), MaxPool2(),
        Conv2d(c1, c2, 3, rng=rng, dtype=dtype), BatchNorm(c2, dtype=dtype), ReLU(), MaxPool2(),
        FullyConnected(c2 * 5 * 5, hidden, rng=rng, dtype=dtype), BatchNorm(hidden, dtype=dtype), ReLU(),
        FullyConnected(hidden, 2, rng=rng, dtype=dtype), Softmax(),
    ], input_shape=(STACK_DEPTH, CLASSIFIER_SIDE, CLASSIFIER_SIDE), loss="cross_entropy")


def regression_net(seed: int = 0, dtype=np.float32, channels=(16, 32), hidden: int = 512) -> Network:
    rng = np.random.default_rng(seed)
    c1, c2 = channels
    return Network([
        Conv2d(STACK_DEPTH, c1, 3, rng=rng, dtype=dtype), BatchNorm(c1, dtype=dtype), ReLU(), MaxPool2(),
        Conv2d(c1, c2, 3, rng=rng, dtype=dtype), BatchNorm(c2, dtype=dtype), ReLU(),
        FullyConnected(c2 * 22 * 22, hidden, rng=rng, dtype=dtype), BatchNorm(hidden, dtype=dtype), ReLU(),
        FullyConnected(hidden, RESPONSE_SIDE * RESPONSE_SIDE, rng=rng, dtype=dtype), Sigmoid(),
    ], input_shape=(STACK_DEPTH, REGRESSOR_SIDE, REGRESSOR_SIDE), loss="mse")
