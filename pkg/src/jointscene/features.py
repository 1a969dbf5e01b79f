"""Two-channel log-mel features and per-frame label matrices.

Channel 0 holds the log-mel spectrogram, channel 1 a temporally smoothed copy
of it. Both are standardized per mel band and per channel with statistics
taken from training recordings only.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import AudioClip, resample, stft

FEATURE_SR = 22050
N_FFT = 2048
HOP = 512
N_MELS = 128
LOG_EPS = 1e-10


@dataclass
class FeatureTensor:
    """``values`` has shape (frames, n_mels, 2)."""

    values: np.ndarray
    frame_hop_s: float
    sample_rate: int = FEATURE_SR

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def raw(self) -> np.ndarray:
        return self.values[..., 0]

    @property
    def smoothed(self) -> np.ndarray:
        return self.values[..., 1]


def frame_count(n_samples: int, hop: int = HOP) -> int:
    return n_samples // hop + 1


def stft_magnitude(clip, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """|STFT| with a centered, reflect-padded Hann window: (frames, n_fft//2 + 1)."""
    x = clip.samples if isinstance(clip, AudioClip) else clip
    return np.abs(stft(x, n_fft, hop))


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    log = min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz, min_log_mel = 1000.0, 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(n_mels: int = N_MELS, sr: int = FEATURE_SR, n_fft: int = N_FFT,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Area-normalized triangular filters, shape (n_mels, n_fft//2 + 1)."""
    if n_mels >= n_fft // 2:
        raise ValueError(f"n_mels ({n_mels}) must be below n_fft/2 ({n_fft // 2})")
    fmax = sr / 2 if fmax is None else fmax
    fft_freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def log_mel(clip: AudioClip, sr: int = FEATURE_SR, n_fft: int = N_FFT, hop: int = HOP,
            n_mels: int = N_MELS, eps: float = LOG_EPS, filterbank=None) -> np.ndarray:
    """Natural log of mel-band power, shape (frames, n_mels)."""
    if clip.sample_rate != sr:
        clip = resample(clip, sr)
    power = stft_magnitude(clip, n_fft, hop) ** 2
    fb = mel_filterbank(n_mels, sr, n_fft) if filterbank is None else filterbank
    return np.log(power @ fb.T + eps)


def temporal_smooth(feature: np.ndarray, window_frames: int = 21) -> np.ndarray:
    """Centered moving average along time (axis 0) with edge replication."""
    if window_frames < 1 or window_frames % 2 == 0:
        raise ValueError(f"window_frames must be odd and >= 1, got {window_frames}")
    if window_frames == 1:
        return np.array(feature, dtype=np.float64)
    return uniform_filter1d(np.asarray(feature, dtype=np.float64), window_frames,
                            axis=0, mode="nearest")


def stack_channels(raw: np.ndarray, smoothed: np.ndarray) -> np.ndarray:
    if raw.shape != smoothed.shape:
        raise ValueError(f"channel shapes differ: {raw.shape} vs {smoothed.shape}")
    return np.stack([raw, smoothed], axis=-1)


def labels_from_annotation(track, n_frames: int, frame_hop_s: float, ontology) -> np.ndarray:
    """Per-frame N-hot labels, shape (frames, n_scenes + n_events + 1).

    Frame ``f`` covers ``[f * hop, (f + 1) * hop)``; an event marks every frame
    its half-open interval intersects. The last column is on for frames with
    no active event.
    """
    labels = np.zeros((n_frames, ontology.n_labels), dtype=np.uint8)
    labels[:, ontology.scene_index(track.scene_label)] = 1
    for e in track.events:
        col = ontology.event_column(e.label)
        first = max(0, math.floor(e.onset / frame_hop_s + 1e-9))
        stop = min(n_frames, math.ceil(e.offset / frame_hop_s - 1e-9))
        if stop > first:
            labels[first:stop, col] = 1
    event_cols = slice(ontology.n_scenes, ontology.n_scenes + ontology.n_events)
    labels[:, ontology.background_column] = labels[:, event_cols].sum(axis=1) == 0
    return labels


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Turn audio clips into unstandardized (frames, n_mels, 2) feature arrays."""

    def __init__(self, sample_rate=FEATURE_SR, n_fft=N_FFT, hop_length=HOP, n_mels=N_MELS,
                 smooth_window=21, eps=LOG_EPS):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop_length = hop_length
        self.n_mels = n_mels
        self.smooth_window = smooth_window
        self.eps = eps

    def fit(self, X=None, y=None):
        self.filterbank_ = mel_filterbank(self.n_mels, self.sample_rate, self.n_fft)
        return self

    @property
    def frame_hop_s(self) -> float:
        return self.hop_length / self.sample_rate

    def transform_one(self, clip: AudioClip) -> np.ndarray:
        check_is_fitted(self, "filterbank_")
        raw = log_mel(clip, self.sample_rate, self.n_fft, self.hop_length, self.n_mels,
                      self.eps, self.filterbank_)
        return stack_channels(raw, temporal_smooth(raw, self.smooth_window))

    def transform(self, X):
        return [self.transform_one(clip) for clip in X]


class FeatureStandardizer(TransformerMixin, BaseEstimator):
    """Per band, per channel standardization fitted on training features.

    Sums are formed per recording and combined with exactly rounded
    summation, so the statistics do not depend on the order of the inputs.
    """

    def __init__(self, min_std=1e-8):
        self.min_std = min_std

    def fit(self, X, y=None):
        X = [np.asarray(x, dtype=np.float64) for x in X]
        if not X:
            raise ValueError("cannot fit a standardizer on zero recordings")
        shape = X[0].shape[1:]
        count = sum(x.shape[0] for x in X)
        sums = np.stack([x.sum(axis=0) for x in X])
        mean = _fsum_along_first(sums) / count
        sq = np.stack([((x - mean) ** 2).sum(axis=0) for x in X])
        var = _fsum_along_first(sq) / count
        std = np.sqrt(var)
        self.mean_ = mean.reshape(shape)
        self.scale_ = np.where(std < self.min_std, 1.0, std).reshape(shape)
        self.n_frames_seen_ = count
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        if isinstance(X, np.ndarray) and X.ndim == self.mean_.ndim + 1:
            return (X - self.mean_) / self.scale_
        return [(np.asarray(x, dtype=np.float64) - self.mean_) / self.scale_ for x in X]

    def to_dict(self) -> dict:
        check_is_fitted(self, "mean_")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "n_frames": int(self.n_frames_seen_), "min_std": self.min_std}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStandardizer":
        obj = cls(min_std=d.get("min_std", 1e-8))
        obj.mean_ = np.asarray(d["mean"], dtype=np.float64)
        obj.scale_ = np.asarray(d["scale"], dtype=np.float64)
        obj.n_frames_seen_ = d.get("n_frames", 0)
        return obj


def _fsum_along_first(a: np.ndarray) -> np.ndarray:
    flat = a.reshape(a.shape[0], -1)
    return np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])]).reshape(a.shape[1:])


_MAGIC = b"JSFEAT01"
_HEADER = struct.Struct("<8sIIIdd")


def write_feature_file(path, values: np.ndarray, frame_hop_s: float, sample_rate: int) -> Path:
    """Binary container: magic, ndim and dims, hop, rate, then little-endian float32."""
    values = np.asarray(values)
    if values.ndim != 3:
        raise ValueError(f"expected a (frames, mels, channels) array, got {values.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, *values.shape, float(frame_hop_s), float(sample_rate)))
        fh.write(values.astype("<f4").tobytes())
    return path


def read_feature_file(path) -> FeatureTensor:
    data = Path(path).read_bytes()
    magic, t, m, c, hop, sr = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a feature file")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=t * m * c)
    return FeatureTensor(values.reshape(t, m, c).astype(np.float32), hop, int(sr))
