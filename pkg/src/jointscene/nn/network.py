"""The convolutional-recurrent tagger and its configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from .layers import (BatchNorm, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU,
                     TimeUpsample)
from .losses import PROB_CLIP
from .lstm import LSTM


@dataclass(frozen=True)
class NetworkConfig:
    """Layer sizes of the CRNN.

    Three conv blocks (conv, activation, max-pool, optional batchnorm,
    dropout), a per-frame flatten, an LSTM, a ReLU dense layer, dropout,
    batchnorm and a sigmoid output layer. Pooling strides frequency by 2
    and time by ``pool_time_stride``; with a time stride above 1 the output
    is repeated back to the input frame rate.
    """

    n_mels: int = 128
    n_channels: int = 2
    n_outputs: int = 43
    conv_filters: tuple = (64, 128, 256)
    conv_kernels: tuple = ((3, 3), (3, 3), (2, 2))
    pool_kernels: tuple = ((3, 3), (3, 3), (2, 2))
    batchnorm_blocks: tuple = (True, False, True)
    conv_activation: str = "relu"
    conv_dropout: float = 0.25
    lstm_units: int = 256
    dense_units: int = 256
    hidden_dropout: float = 0.5
    pool_time_stride: int = 1
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def __post_init__(self):
        for name in ("conv_filters", "batchnorm_blocks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("conv_kernels", "pool_kernels"):
            object.__setattr__(self, name, tuple(tuple(k) for k in getattr(self, name)))
        n = len(self.conv_filters)
        if not (len(self.conv_kernels) == len(self.pool_kernels) == len(self.batchnorm_blocks) == n):
            raise ValueError("conv_filters, conv_kernels, pool_kernels and batchnorm_blocks "
                             "must have the same length")
        if self.conv_activation not in ("relu", "linear"):
            raise ValueError(f"unknown conv_activation {self.conv_activation!r}")

    @classmethod
    def desk(cls, n_mels=32, n_outputs=10, **overrides) -> "NetworkConfig":
        """Reduced widths for CPU-scale experiments."""
        base = dict(n_mels=n_mels, n_outputs=n_outputs, conv_filters=(16, 32, 64),
                    lstm_units=64, dense_units=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["conv_kernels"] = [list(k) for k in self.conv_kernels]
        d["pool_kernels"] = [list(k) for k in self.pool_kernels]
        d["batchnorm_blocks"] = list(self.batchnorm_blocks)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def pooled_mels(self) -> int:
        f = self.n_mels
        for _ in self.conv_filters:
            f = -(-f // 2)
        return f


class CRNN:
    """Frame-wise multi-label tagger: (N, T, n_mels, C) -> (N, T, n_outputs) logits."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.dropout_rng = np.random.default_rng(dropout_seq)
        self.layers: list[Layer] = self._build(init_rng)

    def _build(self, rng) -> list[Layer]:
        cfg, dt = self.config, self.dtype
        layers: list[Layer] = []
        cin = cfg.n_channels
        for filters, kernel, pool, bn in zip(cfg.conv_filters, cfg.conv_kernels,
                                             cfg.pool_kernels, cfg.batchnorm_blocks):
            layers.append(Conv2D(cin, filters, kernel, rng, dt))
            if cfg.conv_activation == "relu":
                layers.append(ReLU())
            layers.append(MaxPool2D(pool, stride=(cfg.pool_time_stride, 2)))
            if bn:
                layers.append(BatchNorm(filters, cfg.bn_momentum, cfg.bn_epsilon, dt))
            layers.append(Dropout(cfg.conv_dropout, self.dropout_rng))
            cin = filters
        layers.append(Flatten())
        flat = cin * cfg.pooled_mels()
        layers.append(LSTM(flat, cfg.lstm_units, rng, dt))
        layers.append(Dense(cfg.lstm_units, cfg.dense_units, rng, dt))
        layers.append(ReLU())
        layers.append(Dropout(cfg.hidden_dropout, self.dropout_rng))
        layers.append(BatchNorm(cfg.dense_units, cfg.bn_momentum, cfg.bn_epsilon, dt))
        layers.append(Dense(cfg.dense_units, cfg.n_outputs, rng, dt))
        if cfg.pool_time_stride > 1:
            layers.append(TimeUpsample(cfg.pool_time_stride ** len(cfg.conv_filters)))
        return layers

    def __repr__(self):
        return "CRNN(\n  " + ",\n  ".join(map(repr, self.layers)) + "\n)"

    # parameters -------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i:02d}.{layer.name}.{k}": v
                for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i:02d}.{layer.name}.{k}": layer.grads[k]
                for i, layer in enumerate(self.layers) for k in layer.params}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{i:02d}.{layer.name}.{k}": v
                for i, layer in enumerate(self.layers) for k, v in layer.buffers().items()}

    def set_buffers(self, buffers: dict):
        for i, layer in enumerate(self.layers):
            for k in layer.buffers():
                setattr(layer, k, np.array(buffers[f"{i:02d}.{layer.name}.{k}"],
                                           dtype=self.dtype))

    def set_parameters(self, params: dict):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                key = f"{i:02d}.{layer.name}.{k}"
                value = np.asarray(params[key], dtype=self.dtype)
                if value.shape != layer.params[k].shape:
                    raise ValueError(f"{key}: shape {value.shape} != {layer.params[k].shape}")
                layer.params[k] = value.copy()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # computation ------------------------------------------------------

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        cfg = self.config
        if x.ndim != 4 or x.shape[2:] != (cfg.n_mels, cfg.n_channels):
            raise ValueError(
                f"expected input (N, T, {cfg.n_mels}, {cfg.n_channels}), got {x.shape}"
            )
        if isinstance(self.layers[-1], TimeUpsample):
            self.layers[-1].target = x.shape[1]
        out = x
        for layer in self.layers:
            out = layer.forward(out, training)
        return out

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def predict_proba(self, x, batch_size: int = 8) -> np.ndarray:
        x = np.asarray(x)
        outs = [expit(self.forward(x[i:i + batch_size], training=False))
                for i in range(0, len(x), batch_size)]
        # keep probabilities strictly inside (0, 1) despite float saturation
        return np.clip(np.concatenate(outs, axis=0), PROB_CLIP, 1 - PROB_CLIP)

    def dropout_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Dropout)]
