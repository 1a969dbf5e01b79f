"""LSTM layer with backpropagation through time."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .layers import Layer, glorot_uniform


class LSTM(Layer):
    """Single-direction LSTM returning the hidden state at every step.

    Gate blocks in ``Wx``, ``Wh`` and ``b`` are ordered input, forget, cell,
    output. The initial hidden and cell states are zero.
    """

    name = "lstm"

    def __init__(self, in_features, units, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        h4 = 4 * units
        self.units = units
        self.params["Wx"] = glorot_uniform(rng, (in_features, h4), in_features, h4, dtype)
        self.params["Wh"] = glorot_uniform(rng, (units, h4), units, h4, dtype)
        self.params["b"] = np.zeros(h4, dtype=dtype)

    def __repr__(self):
        return f"LSTM({self.params['Wx'].shape[0]}->{self.units})"

    def forward(self, x, training=False):
        n, t, _ = x.shape
        H = self.units
        Wh = self.params["Wh"]
        xz = x @ self.params["Wx"] + self.params["b"]
        dtype = xz.dtype
        h = np.zeros((n, H), dtype=dtype)
        c = np.zeros((n, H), dtype=dtype)
        hs = np.empty((n, t, H), dtype=dtype)
        cs = np.empty((n, t + 1, H), dtype=dtype)
        gates = np.empty((n, t, 4 * H), dtype=dtype)
        tanh_c = np.empty((n, t, H), dtype=dtype)
        cs[:, 0] = 0
        for k in range(t):
            z = xz[:, k] + h @ Wh
            ifo = expit(z[:, np.r_[0:2 * H, 3 * H:4 * H]])
            i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
            g = np.tanh(z[:, 2 * H:3 * H])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[:, k, :H], gates[:, k, H:2 * H] = i, f
            gates[:, k, 2 * H:3 * H], gates[:, k, 3 * H:] = g, o
            cs[:, k + 1] = c
            tanh_c[:, k] = tc
            hs[:, k] = h
        self._cache = (x, hs, cs, gates, tanh_c)
        return hs

    def backward(self, dout):
        x, hs, cs, gates, tanh_c = self._cache
        n, t, H = hs.shape
        Wh = self.params["Wh"]
        dz = np.empty((n, t, 4 * H), dtype=dout.dtype)
        dh_next = np.zeros((n, H), dtype=dout.dtype)
        dc_next = np.zeros((n, H), dtype=dout.dtype)
        for k in range(t - 1, -1, -1):
            i, f = gates[:, k, :H], gates[:, k, H:2 * H]
            g, o = gates[:, k, 2 * H:3 * H], gates[:, k, 3 * H:]
            tc = tanh_c[:, k]
            dh = dout[:, k] + dh_next
            dc = dh * o * (1 - tc * tc) + dc_next
            dz[:, k, :H] = dc * g * i * (1 - i)
            dz[:, k, H:2 * H] = dc * cs[:, k] * f * (1 - f)
            dz[:, k, 2 * H:3 * H] = dc * i * (1 - g * g)
            dz[:, k, 3 * H:] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = dz[:, k] @ Wh.T
        dz2 = dz.reshape(-1, 4 * H)
        h_prev = np.concatenate([np.zeros((n, 1, H), dtype=hs.dtype), hs[:, :-1]], axis=1)
        self.grads["Wx"] = x.reshape(-1, x.shape[-1]).T @ dz2
        self.grads["Wh"] = h_prev.reshape(-1, H).T @ dz2
        self.grads["b"] = dz2.sum(axis=0)
        return dz @ self.params["Wx"].T
