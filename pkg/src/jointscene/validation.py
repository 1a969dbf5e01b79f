"""Input checks shared by the estimators."""

import numpy as np


def check_features(X, n_mels=None, n_channels=None) -> np.ndarray:
    """Return ``X`` as a float array shaped (recordings, frames, n_mels, channels)."""
    if isinstance(X, (list, tuple)):
        shapes = {np.shape(x) for x in X}
        if len(shapes) > 1:
            raise ValueError(f"feature arrays differ in shape: {sorted(shapes)}")
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected features shaped (N, T, n_mels, C), got {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("empty feature array")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or infinity")
    if n_mels is not None and X.shape[2] != n_mels:
        raise ValueError(f"expected {n_mels} mel bands, got {X.shape[2]}")
    if n_channels is not None and X.shape[3] != n_channels:
        raise ValueError(f"expected {n_channels} channels, got {X.shape[3]}")
    return X


def check_labels(Y, n_frames=None, n_outputs=None) -> np.ndarray:
    """Return binary targets shaped (recordings, frames, n_outputs)."""
    Y = np.asarray(Y)
    if Y.ndim == 2:
        Y = Y[None]
    if Y.ndim != 3:
        raise ValueError(f"expected labels shaped (N, T, K), got {Y.shape}")
    if not np.isin(Y, (0, 1)).all():
        raise ValueError("labels must be binary")
    if n_frames is not None and Y.shape[1] != n_frames:
        raise ValueError(f"labels have {Y.shape[1]} frames, features {n_frames}")
    if n_outputs is not None and Y.shape[2] != n_outputs:
        raise ValueError(f"expected {n_outputs} label columns, got {Y.shape[2]}")
    return Y


def check_probabilities(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"expected a (frames, classes) matrix, got {P.shape}")
    if np.any((P < 0) | (P > 1)) or not np.all(np.isfinite(P)):
        raise ValueError("scores must lie in [0, 1]")
    return P
