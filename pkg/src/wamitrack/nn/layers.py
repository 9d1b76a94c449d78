"""Layer kinds for the small spatio-temporal CNNs.

Every layer keeps what it needs from ``forward`` to run ``backward``;
parameters and their gradients live in ``params`` / ``grads`` under the
same keys. Batch-norm running statistics are ``buffers``: they are saved
with the weights but never receive gradients.

Spatial activations are channels-last ``(N, H, W, C)`` inside the network;
:class:`~wamitrack.nn.network.Network` converts its ``(N, C, H, W)`` input.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = [
    "Layer",
    "Conv2d",
    "BatchNorm",
    "ReLU",
    "MaxPool2",
    "FullyConnected",
    "Softmax",
    "Sigmoid",
    "LAYER_KINDS",
]


class Layer:
    kind = "layer"

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.name = self.kind

    def config(self) -> dict:
        return {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _shape_error(self, msg: str) -> ValueError:
        return ValueError(f"layer {self.name}: {msg}")


class Conv2d(Layer):
    """Stride-1 convolution with zero padding that preserves height and width."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__(dtype)
        if kernel % 2 == 0:
            raise ValueError("conv kernel must be odd")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = (rng.standard_normal((out_channels, in_channels, kernel, kernel))
                                 * np.sqrt(2.0 / fan_in)).astype(self.dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=self.dtype)

    def config(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "kernel": self.kernel}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise self._shape_error(f"expected ({self.in_channels}, H, W) input, got {in_shape}")
        return (self.out_channels,) + tuple(in_shape[1:])

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise self._shape_error(f"expected (N, H, W, {self.in_channels}) activations, got {x.shape}")
        n, h, w, c = x.shape
        k, p = self.kernel, self.kernel // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = sliding_window_view(xp, (k, k), axis=(1, 2)).reshape(n * h * w, c * k * k)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        y = cols @ wmat.T + self.params["bias"]
        self._cache = (cols, x.shape)
        return y.reshape(n, h, w, self.out_channels)

    def backward(self, dy):
        cols, (n, h, w, c) = self._cache
        k, p = self.kernel, self.kernel // 2
        dy2 = dy.reshape(-1, self.out_channels)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        self.grads["weight"] = (dy2.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] = dy2.sum(axis=0)
        dcols = (dy2 @ wmat).reshape(n, h, w, c, k, k)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w, :] += dcols[..., i, j]
        return dxp[:, p:p + h, p:p + w, :]


class BatchNorm(Layer):
    """Per-channel (4-D input) or per-feature (2-D input) normalisation.

    Training mode normalises with batch statistics and keeps them in
    ``pending`` until the optimiser commits them to the running averages.
    """

    kind = "batchnorm"

    def __init__(self, num_features: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__(dtype)
        self.num_features, self.eps = num_features, eps
        self.params["gamma"] = np.ones(num_features, dtype=self.dtype)
        self.params["beta"] = np.zeros(num_features, dtype=self.dtype)
        self.buffers["running_mean"] = np.zeros(num_features, dtype=self.dtype)
        self.buffers["running_var"] = np.ones(num_features, dtype=self.dtype)
        self.pending = None

    def config(self):
        return {"num_features": self.num_features, "eps": self.eps}

    def output_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise self._shape_error(f"expected {self.num_features} channels, got {in_shape}")
        return in_shape

    def forward(self, x, training=False):
        if x.shape[-1] != self.num_features:
            raise self._shape_error(f"expected {self.num_features} channels, got {x.shape}")
        flat = x.reshape(-1, self.num_features)
        if training:
            mean = flat.mean(axis=0)
            var = flat.var(axis=0)
            self.pending = (mean, var)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (flat - mean) * inv_std
        self._cache = (xhat, inv_std, x.shape)
        return (self.params["gamma"] * xhat + self.params["beta"]).reshape(x.shape)

    def backward(self, dy):
        xhat, inv_std, shape = self._cache
        dy = dy.reshape(-1, self.num_features)
        m = dy.shape[0]
        self.grads["gamma"] = (dy * xhat).sum(axis=0)
        self.grads["beta"] = dy.sum(axis=0)
        dxhat = dy * self.params["gamma"]
        s1 = dxhat.sum(axis=0)
        s2 = (dxhat * xhat).sum(axis=0)
        return ((inv_std / m) * (m * dxhat - s1 - xhat * s2)).reshape(shape)

    def commit(self, momentum: float = 0.9):
        if self.pending is None:
            return
        mean, var = self.pending
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm[...] = momentum * rm + (1.0 - momentum) * mean
        rv[...] = momentum * rv + (1.0 - momentum) * var
        self.pending = None


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped."""

    kind = "maxpool2"

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        xr = (x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
              .transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4))
        idx = xr.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        idx, (n, h, w, c) = self._cache
        ho, wo = h // 2, w // 2
        dxr = np.zeros((n, ho, wo, c, 4), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, :2 * ho, :2 * wo, :] = (dxr.reshape(n, ho, wo, c, 2, 2)
                                      .transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c))
        return dx


class FullyConnected(Layer):
    """Dense layer; any input is flattened per sample."""

    kind = "fc"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__(dtype)
        self.in_features, self.out_features = in_features, out_features
        rng = np.random.default_rng(0) if rng is None else rng
        self.params["weight"] = (rng.standard_normal((out_features, in_features))
                                 * np.sqrt(2.0 / in_features)).astype(self.dtype)
        self.params["bias"] = np.zeros(out_features, dtype=self.dtype)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise self._shape_error(f"expected {self.in_features} inputs, got shape {in_shape}")
        return (self.out_features,)

    def forward(self, x, training=False):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise self._shape_error(f"expected {self.in_features} inputs, got {flat.shape[1]}")
        self._cache = (flat, x.shape)
        return flat @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        flat, shape = self._cache
        self.grads["weight"] = dy.T @ flat
        self.grads["bias"] = dy.sum(axis=0)
        return (dy @ self.params["weight"]).reshape(shape)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, training=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        self._y = y
        return y

    def backward(self, dy):
        y = self._y
        return y * (dy - (dy * y).sum(axis=1, keepdims=True))


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        y = expit(x).astype(x.dtype, copy=False)
        self._y = y
        return y

    def backward(self, dy):
        y = self._y
        return dy * y * (1 - y)


LAYER_KINDS = {cls.kind: cls for cls in (Conv2d, BatchNorm, ReLU, MaxPool2, FullyConnected, Softmax, Sigmoid)}
