"""Sequential network with a loss head, SGD with momentum, and a gradient checker."""
from __future__ import annotations

import copy

import numpy as np

from .layers import BatchNorm, Layer

__all__ = ["Network", "sgd_step", "numeric_gradient_check", "numeric_input_gradient_check"]

_LOSSES = ("cross_entropy", "mse")


class Network:
    """Ordered layers plus a loss.

    ``cross_entropy`` expects probability outputs and one-hot targets;
    ``mse`` is the per-sample sum of squared errors averaged over the batch.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], loss: str = "cross_entropy"):
        if loss not in _LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.loss = loss
        for i, layer in enumerate(self.layers):
            layer.name = f"{i}:{layer.kind}"
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape
        self.velocity: dict[tuple[int, str], np.ndarray] = {}
        self._out = None

    @property
    def dtype(self):
        for layer in self.layers:
            if layer.params:
                return next(iter(layer.params.values())).dtype
        return np.dtype(np.float32)

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every trainable parameter."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def gradients(self) -> dict[tuple[int, str], np.ndarray]:
        return {(i, name): self.layers[i].grads[name] for i, name, _ in self.parameters()
                if name in self.layers[i].grads}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"network input must be (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        for layer in self.layers:
            x = layer.forward(x, training)
        self._out = x
        self._training = training
        return x

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size], training=False) for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0,) + self.output_shape, dtype=self.dtype)
        return np.concatenate(out)

    def loss_value(self, out: np.ndarray, target: np.ndarray) -> float:
        target = np.asarray(target, dtype=out.dtype).reshape(out.shape)
        n = out.shape[0]
        if self.loss == "cross_entropy":
            return float(-(target * np.log(np.maximum(out, 1e-12))).sum() / n)
        return float(((out - target) ** 2).sum() / n)

    def backward(self, target: np.ndarray) -> float:
        """Back-propagate the loss of the last training forward pass; returns the loss."""
        if self._out is None or not self._training:
            raise RuntimeError("backward() needs a preceding forward(..., training=True)")
        out = self._out
        target = np.asarray(target, dtype=out.dtype).reshape(out.shape)
        n = out.shape[0]
        if self.loss == "cross_entropy":
            grad = -target / np.maximum(out, 1e-12) / n
        else:
            grad = 2.0 * (out - target) / n
        loss = self.loss_value(out, target)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss

    def astype(self, dtype) -> "Network":
        net = copy.deepcopy(self)
        for layer in net.layers:
            layer.dtype = np.dtype(dtype)
            for store in (layer.params, layer.buffers):
                for k in store:
                    store[k] = store[k].astype(dtype)
            layer.grads = {}
        net.velocity = {}
        net._out = None
        return net


def sgd_step(net: Network, lr: float, momentum: float = 0.9, bn_momentum: float = 0.9) -> Network:
    """One momentum-SGD update in place; also commits batch-norm statistics."""
    grads = net.gradients()
    if not grads:
        raise RuntimeError("no gradients: call backward() first")
    for i, name, arr in net.parameters():
        g = grads[(i, name)]
        v = net.velocity.get((i, name))
        if v is None:
            v = np.zeros_like(arr)
        v = momentum * v - lr * g
        net.velocity[(i, name)] = v.astype(arr.dtype, copy=False)
        arr += net.velocity[(i, name)]
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.commit(bn_momentum)
    return net


def numeric_gradient_check(net: Network, x: np.ndarray, target: np.ndarray, eps: float = 1e-3,
                           samples: int = 20, rng: np.random.Generator | None = None,
                           floor: float = 1e-8) -> dict[tuple[int, str], float]:
    """Worst relative error between analytic and central-difference gradients.

    Checks up to ``samples`` randomly chosen entries per parameter array and
    returns the maximum ``|a - n| / max(|a|, |n|, floor)`` per array. Run on
    a float64 copy of the network for meaningful tolerances.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    net.forward(x, training=True)
    net.backward(target)
    analytic = {k: v.copy() for k, v in net.gradients().items()}
    worst = {}
    for i, name, arr in net.parameters():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        err = 0.0
        for j in picks:
            orig = flat[j]
            flat[j] = orig + eps
            lp = net.loss_value(net.forward(x, training=True), target)
            flat[j] = orig - eps
            lm = net.loss_value(net.forward(x, training=True), target)
            flat[j] = orig
            num = (lp - lm) / (2 * eps)
            a = analytic[(i, name)].reshape(-1)[j]
            err = max(err, abs(a - num) / max(abs(a), abs(num), floor))
        worst[(i, name)] = err
    return worst


def numeric_input_gradient_check(net: Network, x: np.ndarray, target: np.ndarray, eps: float = 1e-3,
                                 samples: int = 20, rng: np.random.Generator | None = None,
                                 floor: float = 1e-8) -> float:
    """Same as :func:`numeric_gradient_check` but for the gradient w.r.t. the input."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(x, dtype=net.dtype)
    out = net.forward(x, training=True)
    t = np.asarray(target, dtype=out.dtype).reshape(out.shape)
    n = out.shape[0]
    grad = -t / np.maximum(out, 1e-12) / n if net.loss == "cross_entropy" else 2.0 * (out - t) / n
    for layer in reversed(net.layers):
        grad = layer.backward(grad)
    grad = grad.transpose(0, 3, 1, 2)
    flat, gflat = x.reshape(-1), np.ascontiguousarray(grad).reshape(-1)
    err = 0.0
    for j in rng.choice(flat.size, size=min(samples, flat.size), replace=False):
        orig = flat[j]
        flat[j] = orig + eps
        lp = net.loss_value(net.forward(x, training=True), target)
        flat[j] = orig - eps
        lm = net.loss_value(net.forward(x, training=True), target)
        flat[j] = orig
        num = (lp - lm) / (2 * eps)
        err = max(err, abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), floor))
    return err
