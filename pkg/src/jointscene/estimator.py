"""scikit-learn style wrapper around the CRNN."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .nn.checkpoint import read_checkpoint, write_checkpoint
from .nn.network import CRNN, NetworkConfig
from .nn.optim import Adam
from .nn.training import train_network
from .validation import check_features, check_labels


class CRNNTagger(BaseEstimator):
    """Frame-wise multi-label tagger.

    ``fit`` takes features shaped (recordings, frames, n_mels, channels) and
    binary targets shaped (recordings, frames, n_outputs); the input and
    output widths of the network are read from the data.

    Parameters mirror the network layout and the optimiser settings; see
    :class:`~jointscene.nn.network.NetworkConfig` for the layer meaning.
    """

    def __init__(self, conv_filters=(64, 128, 256), conv_kernels=((3, 3), (3, 3), (2, 2)),
                 pool_kernels=((3, 3), (3, 3), (2, 2)), batchnorm_blocks=(True, False, True),
                 conv_activation="relu", conv_dropout=0.25, lstm_units=256, dense_units=256,
                 hidden_dropout=0.5, pool_time_stride=1, learning_rate=1e-3, beta_1=0.9,
                 beta_2=0.999, epsilon=1e-8, batch_size=8, max_epochs=100, patience=10,
                 early_stopping=False, random_state=0, dtype="float32", verbose=False):
        self.conv_filters = conv_filters
        self.conv_kernels = conv_kernels
        self.pool_kernels = pool_kernels
        self.batchnorm_blocks = batchnorm_blocks
        self.conv_activation = conv_activation
        self.conv_dropout = conv_dropout
        self.lstm_units = lstm_units
        self.dense_units = dense_units
        self.hidden_dropout = hidden_dropout
        self.pool_time_stride = pool_time_stride
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.early_stopping = early_stopping
        self.random_state = random_state
        self.dtype = dtype
        self.verbose = verbose

    def network_config(self, n_mels, n_channels, n_outputs) -> NetworkConfig:
        return NetworkConfig(
            n_mels=n_mels, n_channels=n_channels, n_outputs=n_outputs,
            conv_filters=self.conv_filters, conv_kernels=self.conv_kernels,
            pool_kernels=self.pool_kernels, batchnorm_blocks=self.batchnorm_blocks,
            conv_activation=self.conv_activation, conv_dropout=self.conv_dropout,
            lstm_units=self.lstm_units, dense_units=self.dense_units,
            hidden_dropout=self.hidden_dropout, pool_time_stride=self.pool_time_stride,
        )

    def fit(self, X, Y, X_val=None, Y_val=None, eval_train=False):
        X = check_features(X)
        Y = check_labels(Y, n_frames=X.shape[1])
        if len(X) != len(Y):
            raise ValueError(f"{len(X)} feature arrays but {len(Y)} label arrays")
        if X_val is not None:
            X_val = check_features(X_val, n_mels=X.shape[2])
            Y_val = check_labels(Y_val, n_frames=X_val.shape[1], n_outputs=Y.shape[2])
        config = self.network_config(X.shape[2], X.shape[3], Y.shape[2])
        init_seed, train_seed = np.random.SeedSequence(self.random_state).generate_state(2)
        self.network_ = CRNN(config, seed=int(init_seed), dtype=self.dtype)
        optimizer = Adam(self.learning_rate, self.beta_1, self.beta_2, self.epsilon)
        result = train_network(
            self.network_, X, Y, X_val, Y_val, epochs=self.max_epochs,
            batch_size=self.batch_size, optimizer=optimizer, seed=int(train_seed),
            patience=self.patience, early_stopping=self.early_stopping,
            eval_train=eval_train, verbose=self.verbose,
        )
        if result.best_parameters is not None:
            self.network_.set_parameters(result.best_parameters)
            self.network_.set_buffers(result.best_buffers)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.epochs_to_converge_ = result.epochs_to_converge
        self.n_outputs_ = Y.shape[2]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_features(X, n_mels=self.network_.config.n_mels)
        return self.network_.predict_proba(X, self.batch_size)

    def predict(self, X, threshold=0.9) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.uint8)

    def save(self, path, metadata=None):
        check_is_fitted(self, "network_")
        meta = {"estimator_params": _jsonable(self.get_params()),
                "best_epoch": int(self.best_epoch_),
                "epochs_to_converge": int(self.epochs_to_converge_)}
        meta.update(metadata or {})
        return write_checkpoint(path, self.network_, meta)

    @classmethod
    def load(cls, path) -> "CRNNTagger":
        net, header = read_checkpoint(path)
        meta = header.get("metadata", {})
        params = meta.get("estimator_params", {})
        est = cls(**{k: _tupled(v) for k, v in params.items()})
        est.network_ = net
        est.n_outputs_ = net.config.n_outputs
        est.best_epoch_ = meta.get("best_epoch", 0)
        est.epochs_to_converge_ = meta.get("epochs_to_converge", 0)
        est.history_ = []
        return est


def _jsonable(params: dict) -> dict:
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v
    return {k: conv(v) for k, v in params.items()}


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v
