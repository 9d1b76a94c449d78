"""Constructions shared by unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from wamitrack.nn.layers import BatchNorm, Conv2d, FullyConnected, MaxPool2, ReLU, Sigmoid, Softmax
from wamitrack.nn.network import Network
from wamitrack.registration import apply_h
from wamitrack.synth import GTRow

GSD = 0.25


def analytic_pair(h_true, seed=0, shape=(96, 96), terms=24):
    """Frames ``(moving, reference)`` sampled from one continuous texture.

    ``reference(p) = moving(h_true^-1 p)``, so both frames are fully defined
    and ``h_true`` maps moving coordinates into the reference.
    """
    rng = np.random.default_rng(seed)
    freq = rng.uniform(-0.25, 0.25, (terms, 2))
    phase = rng.uniform(0, 2 * np.pi, terms)
    amp = rng.uniform(10, 30, terms)

    def tex(x, y):
        return 128 + sum(a * np.sin(f[0] * x + f[1] * y + ph) for a, f, ph in zip(amp, freq, phase))

    ys, xs = np.mgrid[0:shape[0], 0:shape[1]].astype(float)
    src = apply_h(np.linalg.inv(h_true), np.stack([xs.ravel(), ys.ravel()], axis=1))
    return tex(xs, ys), tex(src[:, 0], src[:, 1]).reshape(shape)


def fragmentation_case():
    """One target that moves 40 frames, stops 25, moves 60; tracks of 5, 26 and 64 frames.

    Returns ``(gt_rows, tracks)``; tracks are ``(frame, id, x, y)`` and sit
    exactly on the target, one after another.
    """
    rows, x = [], 10.0
    for f in range(125):
        moving = not 40 <= f < 65
        if moving and f > 0:
            x += 4.0  # 1 m per frame at 0.25 m/px
        disp = 1.0 if moving else 0.0
        rows.append(GTRow(f, 1, x, 50.0, x * GSD, 50.0 * GSD, disp))
    pos = {r.frame: (r.x, r.y) for r in rows}
    spans = {1: range(0, 5), 2: range(5, 31), 3: list(range(31, 40)) + list(range(65, 120))}
    tracks = [(f, tid, *pos[f]) for tid, fr in spans.items() for f in fr]
    return rows, tracks


def one_hot(rng, n, k=2):
    y = np.zeros((n, k))
    y[np.arange(n), rng.integers(0, k, n)] = 1
    return y


def layer_probe(kind: str, rng):
    """Smallest network exercising ``kind``, in float64, with a matching target."""
    f64 = np.float64
    c, h = 2, 6
    head_ce = lambda n_in: [FullyConnected(n_in, 2, rng=rng, dtype=f64), Softmax()]  # noqa: E731
    layers = {
        "conv2d": [Conv2d(c, 3, 3, rng=rng, dtype=f64)] + head_ce(3 * h * h),
        "batchnorm": [Conv2d(c, 3, 3, rng=rng, dtype=f64), BatchNorm(3, dtype=f64)] + head_ce(3 * h * h),
        "relu": [ReLU()] + head_ce(c * h * h),
        "maxpool2": [MaxPool2()] + head_ce(c * (h // 2) ** 2),
        "fc": head_ce(c * h * h),
        "softmax": head_ce(c * h * h),
        "sigmoid": [FullyConnected(c * h * h, 5, rng=rng, dtype=f64), Sigmoid()],
    }[kind]
    loss = "mse" if kind == "sigmoid" else "cross_entropy"
    net = Network(layers, input_shape=(c, h, h), loss=loss)
    x = rng.normal(0, 1, (4, c, h, h))
    y = rng.uniform(0, 1, (4, 5)) if loss == "mse" else one_hot(rng, 4)
    return net, x, y
