"""Mono audio primitives used by corpus preparation and scene rendering.

Every function takes an :class:`AudioClip` and returns a new one; inputs are
never modified.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, get_window, resample_poly

# Phase vocoder analysis settings, shared with the feature STFT.
PV_N_FFT = 2048
PV_HOP = 512


class AudioError(ValueError):
    """Raised for invalid audio input or impossible audio operations."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """A mono buffer of float64 samples plus its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {samples.shape}")
        if samples.size == 0:
            raise AudioError("empty audio")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        samples = samples.copy() if samples is self.samples else samples
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited rational resampling with a Kaiser-windowed sinc filter."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise AudioError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    return AudioClip(_resample_ratio(clip.samples, up, down), target_rate)


def _resample_ratio(x: np.ndarray, up: int, down: int) -> np.ndarray:
    # long Kaiser sinc keeps tones up to 0.8 x Nyquist of the lower rate intact
    m = max(up, down)
    taps = firwin(2 * 32 * m + 1, 0.95 / m, window=("kaiser", 10.0))
    return resample_poly(x, up, down, window=taps)


def peak_normalize(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples))
    if peak == 0:
        return clip
    return clip.with_samples(clip.samples / peak)


def trim_leading_silence(clip: AudioClip, threshold_db: float = -60.0) -> AudioClip:
    """Drop samples before the first one louder than ``threshold_db`` re peak."""
    if threshold_db >= 0:
        raise AudioError("threshold_db must be negative")
    mag = np.abs(clip.samples)
    peak = mag.max()
    above = np.flatnonzero(mag > peak * 10.0 ** (threshold_db / 20.0))
    if peak == 0 or above.size == 0:
        raise AudioError("no signal above threshold")
    return clip.with_samples(clip.samples[above[0]:])


def db_to_amplitude(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def apply_gain(clip: AudioClip, gain_db: float) -> AudioClip:
    # no clipping here; scenes are peak-normalized once at the end
    return clip.with_samples(clip.samples * db_to_amplitude(gain_db))


def stft(x: np.ndarray, n_fft: int = PV_N_FFT, hop: int = PV_HOP) -> np.ndarray:
    """Centered STFT with a periodic Hann window and reflect padding.

    Returns a complex array of shape ``(len(x) // hop + 1, n_fft // 2 + 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise AudioError("empty audio")
    pad = n_fft // 2
    mode = "reflect" if x.size > 1 else "constant"
    padded = np.pad(x, pad, mode=mode)
    n_frames = x.size // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * get_window("hann", n_fft), axis=-1)


def istft(spec: np.ndarray, hop: int = PV_HOP, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    n_frames = spec.shape[0]
    n_fft = 2 * (spec.shape[1] - 1)
    window = get_window("hann", n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=-1) * window
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    win_sq = window**2
    for k in range(n_frames):
        out[k * hop:k * hop + n_fft] += frames[k]
        norm[k * hop:k * hop + n_fft] += win_sq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out = out[n_fft // 2:]
    if length is not None:
        out = _fix_length(out, length)
    return out


def _fix_length(x: np.ndarray, length: int) -> np.ndarray:
    if x.size >= length:
        return x[:length]
    return np.pad(x, (0, length - x.size))


def _phase_vocoder(spec: np.ndarray, rate: float, hop: int) -> np.ndarray:
    n_bins = spec.shape[1]
    n_fft = 2 * (n_bins - 1)
    steps = np.arange(0, spec.shape[0], rate)
    padded = np.concatenate([spec, np.zeros((2, n_bins), dtype=spec.dtype)])
    idx = steps.astype(int)
    alpha = (steps - idx)[:, None]
    left, right = padded[idx], padded[idx + 1]
    mag = (1.0 - alpha) * np.abs(left) + alpha * np.abs(right)

    advance = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    dphase = np.angle(right) - np.angle(left) - advance
    dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
    increments = advance + dphase
    # phase of output frame t accumulates increments of frames 0..t-1
    phase = np.angle(spec[0]) + np.concatenate(
        [np.zeros((1, n_bins)), np.cumsum(increments[:-1], axis=0)]
    )
    return mag * np.exp(1j * phase)


def time_stretch(clip: AudioClip, ratio: float) -> AudioClip:
    """Phase-vocoder stretch: output duration is ``ratio`` times the input.

    Pitch is preserved. Output length is ``round(len(clip) * ratio)``.
    """
    if ratio <= 0:
        raise AudioError(f"stretch ratio must be positive, got {ratio}")
    if ratio == 1.0:
        return clip
    n_out = max(1, int(round(len(clip) * ratio)))
    spec = stft(clip.samples)
    stretched = _phase_vocoder(spec, 1.0 / ratio, PV_HOP)
    return clip.with_samples(istft(stretched, PV_HOP, length=n_out))


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Shift pitch by ``semitones`` keeping the duration (stretch, then resample)."""
    if abs(semitones) > 12:
        raise AudioError(f"pitch shift limited to 12 semitones, got {semitones}")
    if semitones == 0:
        return clip
    factor = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(clip, factor)
    frac = Fraction(factor).limit_denominator(128)
    y = _resample_ratio(stretched.samples, frac.denominator, frac.numerator)
    return clip.with_samples(_fix_length(y, len(clip)))


def mix_at(base: AudioClip, overlay: AudioClip, onset_s: float, gain_db: float = 0.0) -> AudioClip:
    """Add ``overlay`` scaled by ``gain_db`` into ``base`` starting at ``onset_s``."""
    if base.sample_rate != overlay.sample_rate:
        raise AudioError(
            f"sample rate mismatch: {base.sample_rate} vs {overlay.sample_rate}"
        )
    if onset_s < 0:
        raise AudioError(f"onset must be non-negative, got {onset_s}")
    start = int(round(onset_s * base.sample_rate))
    stop = start + len(overlay)
    if stop > len(base):
        raise AudioError("event exceeds scene bounds")
    out = np.array(base.samples)
    out[start:stop] += overlay.samples * db_to_amplitude(gain_db)
    return base.with_samples(out)


def read_wav(path) -> AudioClip:
    """Read a mono PCM16/PCM32/float WAV file into a float clip."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, subtype: str = "float32") -> Path:
    """Write ``clip`` as ``"float32"`` or ``"pcm16"`` mono WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if subtype == "float32":
        data = clip.samples.astype(np.float32)
    elif subtype == "pcm16":
        data = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        raise AudioError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(str(path), clip.sample_rate, data)
    return path
