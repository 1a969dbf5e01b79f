"""Experiment configuration: one YAML file, overridable key by key.

Every field of every section can be overridden from the command line as
``--section.field value``. Values are parsed as YAML scalars or flow lists,
so ``--synthesis.snr_range "[-10, 10]"`` works as expected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    # "full", "desk" or a path to an ontology YAML file
    ontology: str = "full"
    # event source manifest (event_class, source_id, path)
    events: str = "corpus_sources/events.csv"
    # background manifest (scene_class, location_id, background_id, path)
    backgrounds: str = "corpus_sources/backgrounds.csv"
    work_dir: str = "work"


@dataclass(frozen=True)
class CorpusConfig:
    sample_rate: int = 44100
    trim_db: float = -60.0


@dataclass(frozen=True)
class SynthesisSection:
    scenes_per_background: int = 10
    duration: float = 30.0
    polyphony: int = 3
    snr_range: tuple = (-15.0, 15.0)
    pitch_range: tuple = (-3.0, 3.0)
    stretch_range: tuple = (0.8, 1.15)
    background_gain_db: float = -6.0
    event_count_multiplier: int = 3
    scene_pitch_range: tuple = (1, 6)
    max_retries: int = 50
    audio_subtype: str = "pcm16"


@dataclass(frozen=True)
class FeaturesConfig:
    sample_rate: int = 22050
    n_fft: int = 2048
    hop_length: int = 512
    n_mels: int = 128
    smooth_window: int = 21


@dataclass(frozen=True)
class FoldsConfig:
    k: int = 5
    validation_fraction: float = 0.125


@dataclass(frozen=True)
class NetworkSection:
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


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 100
    patience: int = 10
    early_stopping: bool = False
    dtype: str = "float32"


@dataclass(frozen=True)
class EvaluationConfig:
    asc_threshold: float = 0.9
    sed_threshold: float = 0.5
    segment_s: float = 1.0


SECTIONS = {
    "paths": PathsConfig,
    "corpus": CorpusConfig,
    "synthesis": SynthesisSection,
    "features": FeaturesConfig,
    "folds": FoldsConfig,
    "network": NetworkSection,
    "training": TrainingConfig,
    "evaluation": EvaluationConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    folds: FoldsConfig = field(default_factory=FoldsConfig)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    @classmethod
    def desk(cls, **sections) -> "ExperimentConfig":
        """Small settings that run end to end on a laptop CPU in minutes."""
        base = cls.from_dict(yaml.safe_load(_desk_text()))
        return base.with_overrides({f"{s}.{k}": v for s, d in sections.items()
                                    for k, v in d.items()}) if sections else base

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        kwargs = {"seed": int(d.get("seed", 0))}
        for name, klass in SECTIONS.items():
            kwargs[name] = _build_section(name, klass, d.get(name) or {})
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_dict(yaml.safe_load(path.read_text()))

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply ``{"section.field": value}`` (or ``{"seed": value}``) overrides."""
        d = self.to_dict()
        for key, value in overrides.items():
            if key == "seed":
                d["seed"] = value
                continue
            section, _, name = key.partition(".")
            if section not in SECTIONS or name not in {f.name for f in fields(SECTIONS[section])}:
                raise ConfigError(f"unknown config key {key!r}")
            d[section][name] = value
        return ExperimentConfig.from_dict(d)

    def section_hash(self, *names) -> str:
        """Digest of the named sections (and ``seed`` if listed)."""
        d = self.to_dict()
        payload = {n: d[n] for n in names}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def differences(self, other: "ExperimentConfig") -> dict:
        """``{"section.field": [other value, own value]}`` for every changed field."""
        mine, theirs = self.to_dict(), other.to_dict()
        out = {}
        if mine["seed"] != theirs["seed"]:
            out["seed"] = [theirs["seed"], mine["seed"]]
        for section in SECTIONS:
            for k, v in mine[section].items():
                if theirs[section][k] != v:
                    out[f"{section}.{k}"] = [theirs[section][k], v]
        return out


def _build_section(name, klass, values: dict):
    known = {f.name: f for f in fields(klass)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    defaults = klass()
    kwargs = {}
    for key, value in values.items():
        kwargs[key] = _coerce(f"{name}.{key}", getattr(defaults, key), value)
    return replace(defaults, **kwargs)


def _coerce(key, default, value):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if default and isinstance(default[0], tuple):
            return tuple(tuple(v) for v in value)
        return tuple(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def parse_override_value(text: str):
    """Parse a command-line override as a YAML scalar or flow collection."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from None


def config_keys() -> list[str]:
    """All ``section.field`` keys, in declaration order."""
    return ["seed"] + [f"{s}.{f.name}" for s, k in SECTIONS.items() for f in fields(k)]


def _desk_text() -> str:
    from importlib.resources import files
    return files("jointscene.data").joinpath("desk_experiment.yaml").read_text()
