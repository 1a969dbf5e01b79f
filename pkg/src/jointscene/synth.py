"""Planning and rendering of annotated polyphonic soundscapes.

A scene is produced in two steps. :func:`plan_scene` draws every random
quantity (event classes, corpus entries, onsets, pitch, stretch, SNR) from a
seeded generator, and :func:`render_scene` turns a plan into audio plus an
annotation track without consuming any further randomness.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .annotations import AnnotatedEvent, AnnotationTrack
from .audio import (
    AudioClip,
    AudioError,
    apply_gain,
    peak_normalize,
    pitch_shift,
    resample,
    rms,
    time_stretch,
    trim_leading_silence,
)

logger = logging.getLogger(__name__)

GAIN_VARIANTS_DB = (-10, 0, 10)


@dataclass(frozen=True)
class SynthesisConfig:
    duration: float = 30.0
    sample_rate: int = 44100
    polyphony: int = 3
    snr_range: tuple = (-15.0, 15.0)
    pitch_range: tuple = (-3.0, 3.0)
    stretch_range: tuple = (0.8, 1.15)
    # onset mean / std as fractions of the scene duration (15 s / 5 s at 30 s)
    onset_mean_frac: float = 0.5
    onset_std_frac: float = 1.0 / 6.0
    max_retries: int = 50
    background_gain_db: float = -6.0
    event_count_multiplier: int = 3
    scene_pitch_range: tuple = (1, 6)

    def __post_init__(self):
        for name in ("snr_range", "pitch_range", "stretch_range", "scene_pitch_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass(frozen=True)
class CorpusEntry:
    entry_id: str
    event_class: str
    source_id: str
    gain_db: int
    clip: AudioClip


class EventCorpus:
    """Isolated event recordings, each present once per gain variant."""

    def __init__(self, entries):
        self.entries = list(entries)
        self._by_id = {e.entry_id: e for e in self.entries}
        if len(self._by_id) != len(self.entries):
            raise ValueError("duplicate corpus entry id")
        self._by_class: dict[str, list[CorpusEntry]] = {}
        for e in self.entries:
            self._by_class.setdefault(e.event_class, []).append(e)

    @staticmethod
    def prepare_source(clip: AudioClip, sample_rate: int = 44100,
                       trim_db: float = -60.0) -> AudioClip:
        """Normalize, strip leading silence, resample."""
        return resample(trim_leading_silence(peak_normalize(clip), trim_db), sample_rate)

    @classmethod
    def from_sources(cls, sources, sample_rate: int = 44100, trim_db: float = -60.0):
        """Build a corpus from ``(event_class, source_id, clip)`` triples.

        Each source is prepared once and then emitted at -10, 0 and +10 dB.
        """
        entries = []
        for event_class, source_id, clip in sources:
            base = cls.prepare_source(clip, sample_rate, trim_db)
            for gain in GAIN_VARIANTS_DB:
                entries.append(CorpusEntry(
                    entry_id=gain_variant_id(source_id, gain),
                    event_class=event_class,
                    source_id=source_id,
                    gain_db=gain,
                    clip=apply_gain(base, gain) if gain else base,
                ))
        return cls(entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, entry_id: str) -> CorpusEntry:
        return self._by_id[entry_id]

    def entries_for(self, event_class: str) -> list[CorpusEntry]:
        return self._by_class.get(event_class, [])

    @property
    def event_classes(self):
        return sorted(self._by_class)


def gain_variant_id(source_id: str, gain_db: int) -> str:
    return f"{source_id}@{gain_db:+d}dB"


@dataclass(frozen=True)
class EventPlacement:
    event_class: str
    entry_id: str
    onset_sample: int
    n_samples: int
    pitch_semitones: float
    stretch_ratio: float
    snr_db: float
    sample_rate: int = 44100

    @property
    def onset_s(self) -> float:
        return self.onset_sample / self.sample_rate

    @property
    def offset_s(self) -> float:
        return (self.onset_sample + self.n_samples) / self.sample_rate

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class ScenePlan:
    scene_class: str
    background_id: str
    seed: int
    duration: float
    sample_rate: int
    placements: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["placements"] = [asdict(p) for p in self.placements]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenePlan":
        d = dict(d)
        d["placements"] = [EventPlacement(**p) for p in d.get("placements", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def annotation(self) -> AnnotationTrack:
        events = [AnnotatedEvent(p.onset_s, p.offset_s, p.event_class) for p in self.placements]
        return AnnotationTrack(self.scene_class, events, self.duration)


def draw_event_count(scene_class: str, ontology, rng, multiplier: int = 3) -> int:
    """Uniform count in ``[1, (E + 1) * multiplier]``, E = compatible event classes."""
    n_compatible = len(ontology.compatible_events(scene_class))
    return int(rng.integers(1, (n_compatible + 1) * multiplier, endpoint=True))


def _fits(intervals, start: int, stop: int, cap: int) -> bool:
    # max number of existing intervals active together inside [start, stop)
    points = []
    for s, e in intervals:
        if s < stop and e > start:
            points.append((max(s, start), 1))
            points.append((min(e, stop), -1))
    points.sort()
    cur = best = 0
    for _, delta in points:
        cur += delta
        best = max(best, cur)
    return best + 1 <= cap


def plan_scene(scene_class: str, background_id: str, ontology, corpus: EventCorpus,
               seed: int, config: SynthesisConfig = SynthesisConfig(),
               n_events: int | None = None) -> ScenePlan:
    """Draw a complete, reproducible plan for one scene.

    Onsets come from a normal distribution truncated to keep the event inside
    the scene. An onset that would push concurrency above ``config.polyphony``
    is redrawn up to ``config.max_retries`` times before the event is dropped
    and a warning is recorded on the plan.
    """
    rng = np.random.default_rng(seed)
    classes = ontology.compatible_events(scene_class)
    for c in classes:
        if not corpus.entries_for(c):
            raise ValueError(f"corpus has no entries for event class {c!r}")
    if n_events is None:
        n_events = draw_event_count(scene_class, ontology, rng, config.event_count_multiplier)

    sr = config.sample_rate
    total = config.n_samples
    mean = config.onset_mean_frac * config.duration
    std = config.onset_std_frac * config.duration
    plan = ScenePlan(scene_class, background_id, int(seed), config.duration, sr)
    occupied: list[tuple[int, int]] = []

    for k in range(n_events):
        event_class = classes[int(rng.integers(len(classes)))]
        options = corpus.entries_for(event_class)
        entry = options[int(rng.integers(len(options)))]
        pitch = float(rng.uniform(*config.pitch_range))
        stretch = float(rng.uniform(*config.stretch_range))
        snr = float(rng.uniform(*config.snr_range))
        length = max(1, int(round(len(entry.clip) * stretch)))
        latest = total - length
        if latest < 0:
            msg = f"event {k} ({entry.entry_id}) longer than the scene; dropped"
            plan.warnings.append(msg)
            logger.info(msg)
            continue
        for _ in range(config.max_retries):
            onset = _draw_onset(rng, mean, std, latest / sr)
            start = min(int(round(onset * sr)), latest)
            if _fits(occupied, start, start + length, config.polyphony):
                break
        else:
            msg = f"event {k} ({entry.entry_id}) dropped: polyphony cap after {config.max_retries} draws"
            plan.warnings.append(msg)
            logger.info(msg)
            continue
        occupied.append((start, start + length))
        plan.placements.append(EventPlacement(
            event_class=event_class,
            entry_id=entry.entry_id,
            onset_sample=start,
            n_samples=length,
            pitch_semitones=pitch,
            stretch_ratio=stretch,
            snr_db=snr,
            sample_rate=sr,
        ))
    return plan


def _draw_onset(rng, mean: float, std: float, upper: float) -> float:
    if upper <= 0:
        return 0.0
    a, b = (0.0 - mean) / std, (upper - mean) / std
    return float(truncnorm.rvs(a, b, loc=mean, scale=std, random_state=rng))


def snr_gain(event_stem, background_stem, target_snr_db: float, background_full=None) -> float:
    """Gain in dB that puts ``event_stem`` at ``target_snr_db`` over the background.

    ``background_stem`` is the background restricted to the event span. When
    it is silent the RMS of ``background_full`` is used instead.
    """
    e = rms(event_stem)
    if e == 0:
        raise AudioError("silent event stem")
    b = rms(background_stem)
    if b == 0 and background_full is not None:
        b = rms(background_full)
    if b == 0:
        raise AudioError("silent background")
    return float(target_snr_db - 20.0 * np.log10(e / b))


@dataclass
class RenderedScene:
    audio: AudioClip
    annotation: AnnotationTrack
    background_stem: np.ndarray
    # (onset_sample, gain-scaled samples) per placement, pre-normalization
    event_stems: list
    gains_db: list


def _transform_event(clip: AudioClip, placement: EventPlacement) -> np.ndarray:
    shifted = pitch_shift(clip, placement.pitch_semitones)
    stretched = time_stretch(shifted, placement.stretch_ratio)
    return stretched.samples


def render_stems(plan: ScenePlan, corpus: EventCorpus, background: AudioClip,
                 background_gain_db: float = -6.0) -> RenderedScene:
    """Render a plan keeping the separate stems for inspection."""
    if background.sample_rate != plan.sample_rate:
        background = resample(background, plan.sample_rate)
    total = int(round(plan.duration * plan.sample_rate))
    if len(background) < total:
        raise AudioError(
            f"background {plan.background_id!r} is {background.duration:.2f} s, "
            f"scene needs {plan.duration:.2f} s"
        )
    bg = background.samples[:total] * 10.0 ** (background_gain_db / 20.0)
    mix = bg.copy()
    stems, gains = [], []
    for p in plan.placements:
        samples = _transform_event(corpus[p.entry_id].clip, p)
        if samples.size != p.n_samples:
            raise AudioError(f"rendered length {samples.size} != planned {p.n_samples}")
        stop = p.onset_sample + p.n_samples
        if stop > total:
            raise AudioError("event exceeds scene bounds")
        gain = snr_gain(samples, bg[p.onset_sample:stop], p.snr_db, background_full=bg)
        scaled = samples * 10.0 ** (gain / 20.0)
        mix[p.onset_sample:stop] += scaled
        stems.append((p.onset_sample, scaled))
        gains.append(gain)
    audio = peak_normalize(AudioClip(mix, plan.sample_rate))
    return RenderedScene(audio, plan.annotation(), bg, stems, gains)


def render_scene(plan: ScenePlan, corpus: EventCorpus, background: AudioClip,
                 background_gain_db: float = -6.0) -> tuple[AudioClip, AnnotationTrack]:
    rendered = render_stems(plan, corpus, background, background_gain_db)
    return rendered.audio, rendered.annotation


def augment_scene_pitch(scene_audio: AudioClip, annotation: AnnotationTrack, rng,
                        shift_range=(1, 6)) -> list[tuple[int, AudioClip, AnnotationTrack]]:
    """Two whole-scene pitch-shifted copies, one up and one down.

    Returns ``[(semitones, clip, annotation), ...]``; annotations are copied
    unchanged because the shift preserves timing.
    """
    lo, hi = shift_range
    up = int(rng.integers(lo, hi, endpoint=True))
    down = -int(rng.integers(lo, hi, endpoint=True))
    variants = []
    for shift in (up, down):
        shifted = peak_normalize(pitch_shift(scene_audio, shift))
        track = AnnotationTrack(annotation.scene_label, list(annotation.events),
                                annotation.duration)
        variants.append((shift, shifted, track))
    return variants
