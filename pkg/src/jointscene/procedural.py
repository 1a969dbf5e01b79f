"""Procedural stand-ins for event and background recordings.

Each event class gets one of six archetypes (pulsed beep, rising chirp,
harmonic hum, knocks, band-noise rattle, vibrato whistle) and each scene class
a distinct background noise colour, so the whole pipeline runs without any
external audio. Classes beyond the sixth reuse archetypes at shifted
frequencies.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import AudioClip, peak_normalize, write_wav

ARCHETYPES = ("beep", "chirp", "hum", "knock", "rattle", "whistle")


def _fade(x: np.ndarray, sr: int, ms: float = 10.0) -> np.ndarray:
    n = min(int(sr * ms / 1000), x.size // 2)
    if n > 0:
        ramp = np.linspace(0.0, 1.0, n)
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _band(x, sr, lo, hi, order=4):
    hi = min(hi, 0.45 * sr)
    sos = butter(order, [lo, hi], btype="band", fs=sr, output="sos")
    return sosfilt(sos, x)


def synth_event(class_index: int, rng, sr: int = 44100) -> AudioClip:
    """One random source recording for the event class at ``class_index``."""
    kind = ARCHETYPES[class_index % len(ARCHETYPES)]
    scale = 1.3 ** (class_index // len(ARCHETYPES))
    jitter = rng.uniform(0.9, 1.1)
    f = scale * jitter

    if kind == "beep":
        dur = rng.uniform(0.4, 0.8)
        t = np.arange(int(dur * sr)) / sr
        gate = (np.floor(t / 0.08) % 2 == 0).astype(float)
        x = np.sin(2 * np.pi * 2000 * f * t) * gate
    elif kind == "chirp":
        dur = rng.uniform(0.3, 0.6)
        t = np.arange(int(dur * sr)) / sr
        f0, f1 = 600 * f, 2400 * f
        x = np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * dur)))
    elif kind == "hum":
        dur = rng.uniform(0.8, 1.5)
        t = np.arange(int(dur * sr)) / sr
        x = sum(np.sin(2 * np.pi * 180 * f * h * t) / h for h in range(1, 6))
    elif kind == "knock":
        n_hits = int(rng.integers(3, 6))
        dur = 0.12 * n_hits + 0.1
        n = int(dur * sr)
        x = np.zeros(n)
        hit_len = int(0.08 * sr)
        for k in range(n_hits):
            start = int(k * 0.12 * sr)
            burst = rng.standard_normal(hit_len) * np.exp(-np.arange(hit_len) / (0.015 * sr))
            x[start:start + hit_len] += burst
        x = _band(x, sr, 300 * f, 900 * f)
    elif kind == "rattle":
        dur = rng.uniform(0.5, 1.0)
        n = int(dur * sr)
        t = np.arange(n) / sr
        x = _band(rng.standard_normal(n), sr, 5000 * f, 8000 * f)
        x *= 0.5 * (1 + np.sign(np.sin(2 * np.pi * 25 * t)))
    else:  # whistle
        dur = rng.uniform(0.5, 1.0)
        t = np.arange(int(dur * sr)) / sr
        fc = 3500 * f
        x = np.sin(2 * np.pi * fc * t + (0.03 * fc / 6) * np.sin(2 * np.pi * 6 * t))

    # short silent lead-in so corpus preparation has something to trim
    lead = np.zeros(int(rng.integers(0, int(0.05 * sr))))
    x = np.concatenate([lead, _fade(np.asarray(x, dtype=float), sr)])
    return peak_normalize(AudioClip(0.8 * x, sr))


def synth_background(scene_index: int, location_index: int, duration: float,
                     sr: int = 44100, seed: int = 0) -> AudioClip:
    """Class-distinct background noise; locations vary filter settings."""
    rng = np.random.default_rng([seed, scene_index, location_index])
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    kind = scene_index % 3
    shift = 1.25 ** (scene_index // 3)
    vary = rng.uniform(0.85, 1.15)
    white = rng.standard_normal(n)
    if kind == 0:
        # brown rumble with a slow swell
        x = np.cumsum(white)
        x -= np.convolve(x, np.ones(2001) / 2001, mode="same")
        x = _band(x, sr, 40, 400 * vary * shift, order=2)
        x *= 1 + 0.4 * np.sin(2 * np.pi * 0.2 * vary * t + rng.uniform(0, 2 * np.pi))
    elif kind == 1:
        # machine room: pink-ish noise plus a steady tone band
        x = _band(white, sr, 200, 3000 * vary, order=2)
        x += 0.5 * np.sin(2 * np.pi * 1100 * vary * shift * t)
    else:
        # airy high band with light low rumble
        x = _band(white, sr, 2000 * vary * shift, 6000 * vary * shift, order=2)
        x += 0.3 * _band(rng.standard_normal(n), sr, 60, 200, order=2)
    return peak_normalize(AudioClip(0.5 * x, sr))


def write_procedural_corpus(out_dir, ontology, sources_per_class: int = 4,
                            locations_per_scene: int = 3, background_duration: float = 6.0,
                            sr: int = 44100, seed: int = 0) -> dict:
    """Write source WAVs plus event and background manifests (CSV).

    Returns the paths of the two manifests.
    """
    out = Path(out_dir)
    rows = []
    for ci, event in enumerate(ontology.event_classes):
        for k in range(sources_per_class):
            rng = np.random.default_rng([seed, 1, ci, k])
            source_id = f"{event}_{k:03d}"
            path = write_wav(out / "events" / f"{source_id}.wav", synth_event(ci, rng, sr))
            rows.append({"event_class": event, "source_id": source_id,
                         "path": str(path.relative_to(out))})
    bg_rows = []
    for si, scene in enumerate(ontology.scene_classes):
        for loc in range(locations_per_scene):
            bg_id = f"{scene}_loc{loc:02d}"
            clip = synth_background(si, loc, background_duration, sr, seed)
            path = write_wav(out / "backgrounds" / f"{bg_id}.wav", clip)
            bg_rows.append({"scene_class": scene, "location_id": bg_id,
                            "background_id": bg_id, "path": str(path.relative_to(out))})
    events_manifest = out / "events.csv"
    backgrounds_manifest = out / "backgrounds.csv"
    _write_csv(events_manifest, ["event_class", "source_id", "path"], rows)
    _write_csv(backgrounds_manifest, ["scene_class", "location_id", "background_id", "path"],
               bg_rows)
    return {"events": events_manifest, "backgrounds": backgrounds_manifest}


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
