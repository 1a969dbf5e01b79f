"""Randomized float64 layer instances for finite-difference checks.

``cases(kind, n)`` yields ``n`` (label, layer, input) triples with shapes and
seeds drawn from a fixed generator, so failures are reproducible by label.
"""

import numpy as np

from jointscene.nn.layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU,
                                  TimeUpsample)
from jointscene.nn.lstm import LSTM

F64 = np.float64


class FixedMaskDropout(Dropout):
    """Dropout that redraws the same mask on every call, so finite differences see one function."""

    def __init__(self, rate, seed):
        super().__init__(rate)
        self.seed = seed

    def forward(self, x, training=False):
        self.rng = np.random.default_rng(self.seed)
        return super().forward(x, training)


def _away_from_zero(x, margin=1e-3):
    # keep ReLU inputs off the kink so central differences never straddle it
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _distinct(x, rng):
    # a random permutation of well separated values: no pooling ties
    flat = rng.permutation(x.size).astype(F64) * 0.01 + rng.uniform(0, 0.001)
    return flat.reshape(x.shape)


def make_case(kind, seed):
    rng = np.random.default_rng([2024, seed])
    n = int(rng.integers(1, 3))
    t = int(rng.integers(2, 7))
    f = int(rng.integers(2, 7))
    c = int(rng.integers(1, 4))
    label = f"{kind}-seed{seed}"
    if kind == "conv":
        kernel = tuple(int(k) for k in rng.choice([1, 2, 3], size=2))
        cout = int(rng.integers(1, 4))
        layer = Conv2D(c, cout, kernel, rng, F64)
        layer.params["b"] = rng.standard_normal(cout)
        x = rng.standard_normal((n, t, f, c))
        label += f" kernel={kernel} x={x.shape} cout={cout}"
    elif kind == "relu":
        layer = ReLU()
        x = _away_from_zero(rng.standard_normal((n, t, f, c)))
        label += f" x={x.shape}"
    elif kind == "maxpool":
        kernel = tuple(int(k) for k in rng.choice([2, 3], size=2))
        stride = (int(rng.integers(1, 3)), 2)
        layer = MaxPool2D(kernel, stride)
        x = _distinct(np.empty((n, t, f, c)), rng)
        label += f" kernel={kernel} stride={stride} x={x.shape}"
    elif kind == "batchnorm":
        layer = BatchNorm(c, dtype=F64)
        layer.params["gamma"] = rng.uniform(0.5, 1.5, c)
        layer.params["beta"] = rng.standard_normal(c)
        shape = (n, t, f, c) if rng.random() < 0.5 else (n, t + 2, c)
        x = rng.standard_normal(shape) * 2 + 1
        label += f" x={x.shape}"
    elif kind == "dense":
        din, dout = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        layer = Dense(din, dout, rng, F64)
        layer.params["b"] = rng.standard_normal(dout)
        x = rng.standard_normal((n, t, din))
        label += f" {din}->{dout} x={x.shape}"
    elif kind == "lstm":
        din, units = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        layer = LSTM(din, units, rng, F64)
        layer.params["b"] = rng.standard_normal(4 * units) * 0.5
        x = rng.standard_normal((n, t, din))
        label += f" {din}->{units} x={x.shape}"
    elif kind == "dropout":
        layer = FixedMaskDropout(float(rng.uniform(0.1, 0.6)), seed)
        x = rng.standard_normal((n, t, f))
        label += f" rate={layer.rate:.2f} x={x.shape}"
    elif kind == "flatten":
        layer = Flatten()
        x = rng.standard_normal((n, t, f, c))
        label += f" x={x.shape}"
    elif kind == "upsample":
        layer = TimeUpsample(int(rng.integers(2, 4)))
        x = rng.standard_normal((n, t, f))
        layer.target = t * layer.factor - int(rng.integers(0, layer.factor))
        label += f" factor={layer.factor} x={x.shape}"
    else:
        raise ValueError(kind)
    return label, layer, x


KINDS = ("conv", "relu", "maxpool", "batchnorm", "dense", "lstm", "dropout", "flatten",
         "upsample")


def cases(kind, n):
    return [make_case(kind, seed) for seed in range(n)]
