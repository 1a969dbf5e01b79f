"""Layers with explicit forward and backward passes.

Activations are laid out as (batch, time, frequency, channels) for the
convolutional part and (batch, time, features) afterwards. Every layer keeps
whatever it needs from the last forward call to run ``backward``.
"""

from __future__ import annotations

import numpy as np


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Padding (before, after) giving ``ceil(size / stride)`` outputs, extra on the right."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    """Stride-1 convolution with 'same' padding; weights shaped (kt, kf, cin, cout)."""

    name = "conv"

    def __init__(self, in_channels, out_channels, kernel=(3, 3), rng=None, dtype=np.float32):
        super().__init__()
        self.kernel = tuple(kernel)
        kt, kf = self.kernel
        rng = np.random.default_rng() if rng is None else rng
        self.params["W"] = glorot_uniform(rng, (kt, kf, in_channels, out_channels),
                                          kt * kf * in_channels, kt * kf * out_channels, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    def __repr__(self):
        kt, kf, cin, cout = self.params["W"].shape
        return f"Conv2D({cin}->{cout}, kernel=({kt},{kf}))"

    def forward(self, x, training=False):
        W = self.params["W"]
        kt, kf, cin, cout = W.shape
        if x.ndim != 4 or x.shape[-1] != cin:
            raise ValueError(f"Conv2D expects (N, T, F, {cin}) input, got {x.shape}")
        n, t, f, _ = x.shape
        pt, pf = same_padding(t, kt, 1), same_padding(f, kf, 1)
        xp = np.pad(x, ((0, 0), pt, pf, (0, 0)))
        # im2col with column order (kt, kf, cin), matching W.reshape(-1, cout)
        cols = np.concatenate([xp[:, i:i + t, j:j + f, :] for i in range(kt) for j in range(kf)],
                              axis=-1).reshape(n * t * f, kt * kf * cin)
        out = cols @ W.reshape(-1, cout) + self.params["b"]
        self._cache = (cols, x.shape, pt, pf)
        return out.reshape(n, t, f, cout)

    def backward(self, dout):
        cols, shape, pt, pf = self._cache
        W = self.params["W"]
        kt, kf, cin, cout = W.shape
        n, t, f, _ = shape
        d2 = dout.reshape(-1, cout)
        self.grads["W"] = (cols.T @ d2).reshape(W.shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ W.reshape(-1, cout).T).reshape(n, t, f, kt, kf, cin)
        dxp = np.zeros((n, t + sum(pt), f + sum(pf), cin), dtype=dout.dtype)
        for i in range(kt):
            for j in range(kf):
                dxp[:, i:i + t, j:j + f, :] += dcols[:, :, :, i, j, :]
        return dxp[:, pt[0]:pt[0] + t, pf[0]:pf[0] + f, :]


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


class MaxPool2D(Layer):
    """Max pooling with 'same' padding; ties go to the first maximum in the window."""

    name = "pool"

    def __init__(self, kernel=(3, 3), stride=(1, 2)):
        super().__init__()
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)

    def __repr__(self):
        return f"MaxPool2D(kernel={self.kernel}, stride={self.stride})"

    def output_size(self, t, f):
        return -(-t // self.stride[0]), -(-f // self.stride[1])

    def forward(self, x, training=False):
        kt, kf = self.kernel
        st, sf = self.stride
        n, t, f, c = x.shape
        pt, pf = same_padding(t, kt, st), same_padding(f, kf, sf)
        xp = np.pad(x, ((0, 0), pt, pf, (0, 0)), constant_values=-np.inf)
        to, fo = self.output_size(t, f)
        out = arg = None
        for idx in range(kt * kf):
            i, j = divmod(idx, kf)
            view = xp[:, i:i + st * (to - 1) + 1:st, j:j + sf * (fo - 1) + 1:sf, :]
            if out is None:
                out = view.copy()
                arg = np.zeros(out.shape, dtype=np.int8)
            else:
                # strict comparison keeps the first maximum on ties
                better = view > out
                out = np.maximum(out, view)
                arg = np.where(better, np.int8(idx), arg)
        self._cache = (arg, x.shape, xp.shape, pt, pf)
        return out

    def backward(self, dout):
        arg, shape, pshape, pt, pf = self._cache
        kt, kf = self.kernel
        st, sf = self.stride
        n, t, f, c = shape
        to, fo = dout.shape[1:3]
        dxp = np.zeros(pshape, dtype=dout.dtype)
        for idx in range(kt * kf):
            i, j = divmod(idx, kf)
            hit = arg == idx
            if hit.any():
                dxp[:, i:i + st * (to - 1) + 1:st, j:j + sf * (fo - 1) + 1:sf, :] += np.where(hit, dout, 0)
        return dxp[:, pt[0]:pt[0] + t, pf[0]:pf[0] + f, :]


class BatchNorm(Layer):
    """Normalizes over every axis but the last (the channel / feature axis)."""

    name = "bn"

    def __init__(self, n_features, momentum=0.99, epsilon=1e-3, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = np.ones(n_features, dtype=dtype)
        self.params["beta"] = np.zeros(n_features, dtype=dtype)
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)

    def __repr__(self):
        return f"BatchNorm({self.params['gamma'].size})"

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + self.epsilon)
            return ((x - self.running_mean) * inv * gamma + beta).astype(x.dtype, copy=False)
        axes = tuple(range(x.ndim - 1))
        m = x.size // x.shape[-1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv
        unbiased = var * m / max(m - 1, 1)
        mom = self.momentum
        self.running_mean = (mom * self.running_mean + (1 - mom) * mean).astype(self.running_mean.dtype)
        self.running_var = (mom * self.running_var + (1 - mom) * unbiased).astype(self.running_var.dtype)
        self._cache = (xhat, inv, m)
        return xhat * gamma + beta

    def backward(self, dout):
        xhat, inv, m = self._cache
        axes = tuple(range(dout.ndim - 1))
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"]
        return (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))


class Dropout(Layer):
    """Inverted dropout; identity in eval mode or when ``enabled`` is False."""

    name = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        self.rate = float(rate)
        self.rng = np.random.default_rng() if rng is None else rng
        self.enabled = True
        self._mask = None

    def __repr__(self):
        return f"Dropout({self.rate})"

    def forward(self, x, training=False):
        if not training or not self.enabled or self.rate == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape, dtype=np.float64) >= self.rate
        self._mask = (keep / (1.0 - self.rate)).astype(x.dtype)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    """(N, T, F, C) -> (N, T, F*C): one feature vector per frame."""

    name = "flatten"

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    """Affine map on the last axis."""

    name = "dense"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.params["W"] = glorot_uniform(rng, (in_features, out_features),
                                          in_features, out_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def __repr__(self):
        return f"Dense({self.params['W'].shape[0]}->{self.params['W'].shape[1]})"

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.grads["W"] = x2.T @ d2
        self.grads["b"] = d2.sum(axis=0)
        return dout @ self.params["W"].T


class TimeUpsample(Layer):
    """Nearest-neighbour repeat along time, cropped to a target length."""

    name = "upsample"

    def __init__(self, factor):
        super().__init__()
        self.factor = int(factor)
        self.target = None

    def forward(self, x, training=False):
        out = np.repeat(x, self.factor, axis=1)
        self._t = x.shape[1]
        return out if self.target is None else out[:, :self.target]

    def backward(self, dout):
        n, t_out = dout.shape[:2]
        full = np.zeros((n, self._t * self.factor) + dout.shape[2:], dtype=dout.dtype)
        full[:, :t_out] = dout
        return full.reshape(n, self._t, self.factor, *dout.shape[2:]).sum(axis=2)
