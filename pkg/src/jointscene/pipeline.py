"""Experiment stages: corpus, synthesis, folds, features, training, evaluation.

Every stage writes ``manifest.json`` next to its outputs. The manifest holds
the stage's configuration hash (which covers the settings of all upstream
stages too), the digests of its inputs and outputs and the library versions.
A stage first checks the manifests of the stages it reads: if an upstream
stage was produced under different settings, or its files changed since,
the stage refuses to run unless ``force`` is set.

Work directory layout::

    corpus/      index.csv, entries/*.wav
    dataset/     dataset.csv, audio/*.wav, annotations/*.txt, plans/*.json
    folds/       folds.json
    features/    index.csv, feat/*.feat, labels/*.npy, standardizer_fold*.json
    runs/<task>/fold<k>/   model.ckpt, history.csv, eval.json, predictions/
    reports/     compare.json, compare.txt
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .annotations import AnnotatedEvent, AnnotationTrack, read_annotation, write_annotation
from .audio import read_wav, write_wav
from .config import ExperimentConfig
from .estimator import CRNNTagger
from .features import (FeatureStandardizer, LogMelExtractor, labels_from_annotation,
                       read_feature_file, write_feature_file)
from .folds import make_folds, read_folds, write_folds
from .metrics import (SegmentAccumulator, asc_majority_vote, binarize, cross_fold_report,
                      events_from_frames, format_table)
from .ontology import load_ontology
from .synth import (CorpusEntry, EventCorpus, SynthesisConfig, augment_scene_pitch,
                    gain_variant_id, plan_scene, render_scene)

logger = logging.getLogger(__name__)

TASKS = ("joint", "asc", "sed")
MANIFEST = "manifest.json"

# settings each stage depends on, cumulative along the pipeline
_STAGE_SECTIONS = {
    "corpus": ("corpus",),
    "dataset": ("seed", "corpus", "synthesis"),
    "folds": ("seed", "corpus", "synthesis", "folds"),
    "features": ("seed", "corpus", "synthesis", "folds", "features"),
    "train": ("seed", "corpus", "synthesis", "folds", "features", "network", "training"),
    "evaluate": ("seed", "corpus", "synthesis", "folds", "features", "network", "training",
                 "evaluation"),
}


class PipelineError(RuntimeError):
    """A stage could not run; ``details`` is a JSON-serializable mapping."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self), **self.details}


class StaleInputError(PipelineError):
    pass


@dataclass(frozen=True)
class Layout:
    root: Path

    @classmethod
    def from_config(cls, config: ExperimentConfig, work_dir=None) -> "Layout":
        return cls(Path(work_dir if work_dir is not None else config.paths.work_dir))

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def folds(self) -> Path:
        return self.root / "folds"

    @property
    def features(self) -> Path:
        return self.root / "features"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def run_dir(self, task: str, fold: int) -> Path:
        return self.root / "runs" / task / f"fold{fold}"


# ---------------------------------------------------------------- manifests

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_hash(config: ExperimentConfig, stage: str) -> str:
    """Digest of every setting ``stage`` depends on, including the ontology."""
    d = config.to_dict()
    payload = {k: d[k] for k in _STAGE_SECTIONS[stage]}
    if stage != "corpus":
        payload["ontology"] = load_ontology(config.paths.ontology).to_dict()
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"jointscene": own, "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir, stage: str, config: ExperimentConfig, inputs: dict, outputs,
                   volatile=(), extra=None) -> Path:
    """Record a finished stage.

    ``outputs`` are paths inside ``out_dir``; their digests are stored so
    later stages can detect edits. ``volatile`` outputs (such as timing logs)
    are listed without a digest.
    """
    out_dir = Path(out_dir)
    manifest = {
        "stage": stage,
        "config_hash": stage_hash(config, stage),
        "seed": config.seed,
        "config": {k: config.to_dict()[k] for k in _STAGE_SECTIONS[stage] if k != "seed"},
        "overrides": config.differences(ExperimentConfig()),
        "versions": versions(),
        "inputs": dict(sorted(inputs.items())),
        "outputs": {Path(p).relative_to(out_dir).as_posix(): file_digest(p)
                    for p in sorted(outputs, key=lambda p: Path(p).as_posix())},
        "volatile_outputs": sorted(Path(p).relative_to(out_dir).as_posix() for p in volatile),
    }
    if extra:
        manifest["extra"] = extra
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def check_upstream(out_dir, stage: str, config: ExperimentConfig, force: bool = False,
                   verify_files: bool = True) -> str:
    """Verify an upstream stage and return the digest of its manifest.

    Raises :class:`PipelineError` if the stage never ran and
    :class:`StaleInputError` if it ran under other settings or its outputs
    changed, unless ``force`` is set (then only a warning is logged).
    """
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        raise PipelineError(f"stage {stage!r} has not been run: {path} is missing",
                            stage=stage, path=str(path))
    manifest = json.loads(path.read_text())
    problems = []
    expected = stage_hash(config, stage)
    if manifest.get("config_hash") != expected:
        problems.append(f"config hash {manifest.get('config_hash')} != current {expected}")
    if verify_files:
        for rel, digest in manifest.get("outputs", {}).items():
            f = Path(out_dir) / rel
            if not f.exists():
                problems.append(f"missing output {f}")
            elif file_digest(f) != digest:
                problems.append(f"modified output {f}")
            if len(problems) > 10:
                break
    if problems:
        if not force:
            raise StaleInputError(f"stage {stage!r} output in {out_dir} is stale; rerun it "
                                  f"or pass --force", stage=stage, problems=problems)
        logger.warning("using stale %s output (%s)", stage, "; ".join(problems))
    return file_digest(path)


def _read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise PipelineError(f"manifest not found: {path}", path=str(path))
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path, fieldnames, rows) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def _require_files(paths):
    missing = sorted(str(p) for p in paths if not Path(p).exists())
    if missing:
        raise PipelineError(f"{len(missing)} input file(s) missing: {', '.join(missing[:5])}"
                            + (" ..." if len(missing) > 5 else ""), missing=missing)


def _seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------- corpus

def cmd_prepare_corpus(config: ExperimentConfig, events_manifest, out_dir) -> Path:
    """Normalize, trim and resample every source, then write three gain variants."""
    events_manifest = Path(events_manifest)
    rows = _read_csv(events_manifest)
    base = events_manifest.parent
    paths = [base / r["path"] for r in rows]
    _require_files(paths)
    out_dir = Path(out_dir)
    inputs = {"events_manifest": file_digest(events_manifest)}
    sources = []
    for r, p in zip(rows, paths):
        inputs[f"source/{r['source_id']}"] = file_digest(p)
        sources.append((r["event_class"], r["source_id"], read_wav(p)))
    corpus = EventCorpus.from_sources(sources, config.corpus.sample_rate, config.corpus.trim_db)
    index, outputs = [], []
    for e in corpus.entries:
        rel = Path("entries") / f"{e.source_id}_{e.gain_db:+d}dB.wav"
        outputs.append(write_wav(out_dir / rel, e.clip, "float32"))
        index.append({"entry_id": e.entry_id, "event_class": e.event_class,
                      "source_id": e.source_id, "gain_db": e.gain_db, "path": rel.as_posix()})
    outputs.append(_write_csv(out_dir / "index.csv",
                              ["entry_id", "event_class", "source_id", "gain_db", "path"], index))
    write_manifest(out_dir, "corpus", config, inputs, outputs,
                   extra={"n_sources": len(sources), "n_entries": len(corpus)})
    logger.info("corpus: %d sources -> %d entries", len(sources), len(corpus))
    return out_dir


def load_corpus(corpus_dir) -> EventCorpus:
    corpus_dir = Path(corpus_dir)
    entries = []
    for r in _read_csv(corpus_dir / "index.csv"):
        gain = int(r["gain_db"])
        if r["entry_id"] != gain_variant_id(r["source_id"], gain):
            raise PipelineError(f"corpus index row has inconsistent id {r['entry_id']!r}")
        entries.append(CorpusEntry(r["entry_id"], r["event_class"], r["source_id"], gain,
                                   read_wav(corpus_dir / r["path"])))
    return EventCorpus(entries)


# ---------------------------------------------------------------- synthesis

DATASET_FIELDS = ["id", "scene_class", "location_id", "background_id", "group_id",
                  "pitch_shift", "audio", "annotation", "plan"]


def synthesis_config(config: ExperimentConfig) -> SynthesisConfig:
    s = config.synthesis
    return SynthesisConfig(
        duration=s.duration, sample_rate=config.corpus.sample_rate, polyphony=s.polyphony,
        snr_range=s.snr_range, pitch_range=s.pitch_range, stretch_range=s.stretch_range,
        max_retries=s.max_retries, background_gain_db=s.background_gain_db,
        event_count_multiplier=s.event_count_multiplier, scene_pitch_range=s.scene_pitch_range,
    )


def cmd_synthesize(config: ExperimentConfig, corpus_dir, backgrounds_manifest, out_dir,
                   force: bool = False) -> Path:
    """Render ``scenes_per_background`` scenes per background, each in 3 pitch variants."""
    corpus_digest = check_upstream(corpus_dir, "corpus", config, force)
    ontology = load_ontology(config.paths.ontology)
    backgrounds_manifest = Path(backgrounds_manifest)
    bg_rows = sorted(_read_csv(backgrounds_manifest), key=lambda r: r["background_id"])
    bg_paths = [backgrounds_manifest.parent / r["path"] for r in bg_rows]
    _require_files(bg_paths)
    for r in bg_rows:
        ontology.scene_index(r["scene_class"])
    corpus = load_corpus(corpus_dir)
    missing = [e for e in ontology.event_classes if not corpus.entries_for(e)]
    if missing:
        raise PipelineError(f"corpus has no sources for event classes {missing}", missing=missing)

    syn = synthesis_config(config)
    out_dir = Path(out_dir)
    inputs = {"corpus_manifest": corpus_digest,
              "backgrounds_manifest": file_digest(backgrounds_manifest)}
    rows, outputs, n_dropped = [], [], 0
    for bi, (r, path) in enumerate(zip(bg_rows, bg_paths)):
        inputs[f"background/{r['background_id']}"] = file_digest(path)
        background = read_wav(path)
        for k in range(config.synthesis.scenes_per_background):
            plan_seed = _seed(config.seed, bi, k, 0)
            aug_seed = _seed(config.seed, bi, k, 1)
            plan = plan_scene(r["scene_class"], r["background_id"], ontology, corpus,
                              plan_seed, syn)
            n_dropped += len(plan.warnings)
            audio, track = render_scene(plan, corpus, background, syn.background_gain_db)
            variants = [(0, audio, track)] + augment_scene_pitch(
                audio, track, np.random.default_rng(aug_seed), syn.scene_pitch_range)
            group = f"{r['background_id']}_{k:03d}"
            plan_rel = Path("plans") / f"{group}.json"
            plan_doc = plan.to_dict()
            plan_doc["pitch_variants"] = [shift for shift, _, _ in variants]
            plan_path = out_dir / plan_rel
            plan_path.parent.mkdir(parents=True, exist_ok=True)
            plan_path.write_text(json.dumps(plan_doc, indent=1, sort_keys=True) + "\n")
            outputs.append(plan_path)
            for j, (shift, clip, tr) in enumerate(variants):
                rid = f"{group}_v{j}"
                audio_rel = Path("audio") / f"{rid}.wav"
                ann_rel = Path("annotations") / f"{rid}.txt"
                outputs.append(write_wav(out_dir / audio_rel, clip, config.synthesis.audio_subtype))
                outputs.append(write_annotation(tr, out_dir / ann_rel))
                rows.append({"id": rid, "scene_class": r["scene_class"],
                             "location_id": r["location_id"], "background_id": r["background_id"],
                             "group_id": group, "pitch_shift": shift, "audio": audio_rel.as_posix(),
                             "annotation": ann_rel.as_posix(), "plan": plan_rel.as_posix()})
    outputs.append(_write_csv(out_dir / "dataset.csv", DATASET_FIELDS, rows))
    write_manifest(out_dir, "dataset", config, inputs, outputs,
                   extra={"n_recordings": len(rows), "n_dropped_events": n_dropped})
    logger.info("dataset: %d recordings (%d events dropped by the polyphony cap)",
                len(rows), n_dropped)
    return out_dir


def read_dataset(dataset_dir) -> list[dict]:
    return _read_csv(Path(dataset_dir) / "dataset.csv")


# ---------------------------------------------------------------- folds

def cmd_make_folds(config: ExperimentConfig, dataset_dir, out_dir, force: bool = False) -> Path:
    digest = check_upstream(dataset_dir, "dataset", config, force)
    records = read_dataset(dataset_dir)
    folds = make_folds(records, config.folds.k, config.seed, config.folds.validation_fraction)
    out_dir = Path(out_dir)
    path = write_folds(folds, out_dir / "folds.json")
    write_manifest(out_dir, "folds", config, {"dataset_manifest": digest}, [path],
                   extra={"sizes": [[len(f.train), len(f.validation), len(f.test)] for f in folds]})
    return out_dir


def load_folds(folds_dir):
    return read_folds(Path(folds_dir) / "folds.json")


# ---------------------------------------------------------------- features

def extractor(config: ExperimentConfig) -> LogMelExtractor:
    f = config.features
    return LogMelExtractor(sample_rate=f.sample_rate, n_fft=f.n_fft, hop_length=f.hop_length,
                           n_mels=f.n_mels, smooth_window=f.smooth_window).fit()


def cmd_featurize(config: ExperimentConfig, dataset_dir, folds_dir, out_dir,
                  force: bool = False) -> Path:
    """Features and labels per recording, plus one standardizer per fold.

    Features are stored unstandardized; each fold's standardizer is fitted on
    that fold's training recordings only.
    """
    dataset_digest = check_upstream(dataset_dir, "dataset", config, force)
    folds_digest = check_upstream(folds_dir, "folds", config, force)
    ontology = load_ontology(config.paths.ontology)
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    ext = extractor(config)
    rows, outputs = [], []
    for r in read_dataset(dataset_dir):
        clip = read_wav(dataset_dir / r["audio"])
        feats = ext.transform_one(clip)
        track = read_annotation(dataset_dir / r["annotation"])
        labels = labels_from_annotation(track, feats.shape[0], ext.frame_hop_s, ontology)
        feat_rel = Path("feat") / f"{r['id']}.feat"
        label_rel = Path("labels") / f"{r['id']}.npy"
        outputs.append(write_feature_file(out_dir / feat_rel, feats, ext.frame_hop_s,
                                          ext.sample_rate))
        (out_dir / label_rel).parent.mkdir(parents=True, exist_ok=True)
        np.save(out_dir / label_rel, labels)
        outputs.append(out_dir / label_rel)
        rows.append({"id": r["id"], "features": feat_rel.as_posix(),
                     "labels": label_rel.as_posix(), "n_frames": feats.shape[0]})
    outputs.append(_write_csv(out_dir / "index.csv", ["id", "features", "labels", "n_frames"],
                              rows))
    index = {r["id"]: r for r in rows}
    for fold in load_folds(folds_dir):
        std = fit_standardizer(out_dir, [index[i] for i in fold.train])
        path = out_dir / f"standardizer_fold{fold.fold_id}.json"
        path.write_text(json.dumps(std.to_dict(), sort_keys=True) + "\n")
        outputs.append(path)
    write_manifest(out_dir, "features", config,
                   {"dataset_manifest": dataset_digest, "folds_manifest": folds_digest}, outputs,
                   extra={"n_recordings": len(rows), "frame_hop_s": ext.frame_hop_s,
                          "label_columns": ontology.n_labels})
    return out_dir


def fit_standardizer(features_dir, rows) -> FeatureStandardizer:
    return FeatureStandardizer().fit(
        [read_feature_file(Path(features_dir) / r["features"]).values for r in rows])


def task_columns(ontology, task: str) -> slice:
    """Columns of the full label matrix a task is trained on."""
    if task == "joint":
        return slice(0, ontology.n_labels)
    if task == "asc":
        return slice(0, ontology.n_scenes)
    if task == "sed":
        return slice(ontology.n_scenes, ontology.n_scenes + ontology.n_events)
    raise PipelineError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")


def load_split(features_dir, ids, standardizer, columns: slice):
    features_dir = Path(features_dir)
    index = {r["id"]: r for r in _read_csv(features_dir / "index.csv")}
    missing = [i for i in ids if i not in index]
    if missing:
        raise PipelineError(f"{len(missing)} recording(s) have no features", missing=missing[:20])
    X = np.stack([standardizer.transform(read_feature_file(features_dir / index[i]["features"])
                                         .values[None])[0] for i in ids]).astype(np.float32)
    Y = np.stack([np.load(features_dir / index[i]["labels"])[:, columns] for i in ids])
    return X, Y


def _standardizer(features_dir, fold: int) -> FeatureStandardizer:
    path = Path(features_dir) / f"standardizer_fold{fold}.json"
    if not path.exists():
        raise PipelineError(f"no standardizer for fold {fold}: {path}", path=str(path))
    return FeatureStandardizer.from_dict(json.loads(path.read_text()))


def _fold(folds_dir, fold: int):
    folds = load_folds(folds_dir)
    if not 0 <= fold < len(folds):
        raise PipelineError(f"fold {fold} out of range (have {len(folds)})")
    return folds[fold]


# ---------------------------------------------------------------- training

def make_estimator(config: ExperimentConfig, random_state: int) -> CRNNTagger:
    n, t = config.network, config.training
    return CRNNTagger(
        conv_filters=n.conv_filters, conv_kernels=n.conv_kernels, pool_kernels=n.pool_kernels,
        batchnorm_blocks=n.batchnorm_blocks, conv_activation=n.conv_activation,
        conv_dropout=n.conv_dropout, lstm_units=n.lstm_units, dense_units=n.dense_units,
        hidden_dropout=n.hidden_dropout, pool_time_stride=n.pool_time_stride,
        learning_rate=t.learning_rate, beta_1=t.beta_1, beta_2=t.beta_2, epsilon=t.epsilon,
        batch_size=t.batch_size, max_epochs=t.max_epochs, patience=t.patience,
        early_stopping=t.early_stopping, random_state=random_state, dtype=t.dtype,
    )


HISTORY_FIELDS = ["epoch", "train_loss", "val_loss", "wall_time"]


def cmd_train(config: ExperimentConfig, task: str, fold: int, features_dir, folds_dir, out_dir,
              force: bool = False) -> Path:
    """Train one task on one fold; writes ``model.ckpt`` and ``history.csv``."""
    features_digest = check_upstream(features_dir, "features", config, force)
    folds_digest = check_upstream(folds_dir, "folds", config, force)
    ontology = load_ontology(config.paths.ontology)
    columns = task_columns(ontology, task)
    split = _fold(folds_dir, fold)
    std = _standardizer(features_dir, fold)
    X, Y = load_split(features_dir, split.train, std, columns)
    X_val, Y_val = (load_split(features_dir, split.validation, std, columns)
                    if split.validation else (None, None))
    est = make_estimator(config, _seed(config.seed, TASKS.index(task), fold))
    est.fit(X, Y, X_val, Y_val)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = est.save(out_dir / "model.ckpt", metadata={
        "task": task, "fold": fold, "columns": [columns.start, columns.stop],
        "config_hash": stage_hash(config, "train")})
    history = _write_csv(out_dir / "history.csv", HISTORY_FIELDS,
                         [{k: _fmt(row[k]) for k in HISTORY_FIELDS} for row in est.history_])
    write_manifest(out_dir, "train", config,
                   {"features_manifest": features_digest, "folds_manifest": folds_digest},
                   [ckpt], volatile=[history],
                   extra={"task": task, "fold": fold, "n_outputs": Y.shape[2],
                          "n_train": len(X), "n_validation": 0 if X_val is None else len(X_val),
                          "best_epoch": int(est.best_epoch_),
                          "epochs_to_converge": int(est.epochs_to_converge_),
                          "train_loss": [float(r["train_loss"]) for r in est.history_],
                          "val_loss": [_finite(r["val_loss"]) for r in est.history_]})
    return out_dir


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------- evaluation

def score_predictions(P, tracks, ontology, task: str, frame_hop_s: float,
                      asc_threshold: float = 0.9, sed_threshold: float = 0.5,
                      segment_s: float = 1.0) -> tuple[dict, list]:
    """Score per-recording probability matrices in one pass.

    ``P`` holds one (frames, outputs) matrix per recording in the column
    layout of ``task``. Returns the fold metrics and the predicted
    annotation tracks.
    """
    n_s, n_e = ontology.n_scenes, ontology.n_events
    scene_cols = slice(0, n_s) if task in ("joint", "asc") else None
    event_cols = {"joint": slice(n_s, n_s + n_e), "sed": slice(0, n_e)}.get(task)
    correct = 0
    acc = SegmentAccumulator(ontology.event_classes, segment_s)
    silent = SegmentAccumulator(ontology.event_classes, segment_s)
    predicted = []
    for p, track in zip(P, tracks):
        scene = "unknown"
        if scene_cols is not None:
            s = p[:, scene_cols]
            idx = asc_majority_vote(binarize(s, asc_threshold), s)
            scene = ontology.scene_classes[idx]
            correct += scene == track.scene_label
        events = []
        if event_cols is not None:
            for onset, offset, col in events_from_frames(binarize(p[:, event_cols], sed_threshold),
                                                          frame_hop_s):
                offset = min(offset, track.duration)
                if offset > onset:
                    events.append(AnnotatedEvent(round(onset, 6), round(offset, 6),
                                                 ontology.event_classes[col]))
            ref = track.as_tuples()
            acc.add(ref, [(e.onset, e.offset, e.label) for e in events], track.duration)
            silent.add(ref, [], track.duration)
        predicted.append(AnnotationTrack(scene, events, track.duration))
    result = {"task": task, "n_test": len(tracks)}
    if scene_cols is not None:
        result["asc_accuracy"] = correct / len(tracks) if tracks else float("nan")
    if event_cols is not None:
        m = acc.result()
        result.update({
            "sed_f1": 100.0 * m.f1, "sed_er": m.error_rate, "sed_precision": m.precision,
            "sed_recall": m.recall, "sed_reference_empty": m.reference_empty,
            "silent_baseline_f1": 100.0 * silent.result().f1,
            "class_wise": m.class_wise, "counts": vars(m.counts),
        })
    return result, predicted


def cmd_evaluate(config: ExperimentConfig, task: str, fold: int, run_dir, features_dir,
                 folds_dir, dataset_dir, force: bool = False) -> dict:
    """Score a trained run on its test split; writes ``eval.json`` and prediction dumps."""
    run_dir = Path(run_dir)
    run_digest = check_upstream(run_dir, "train", config, force)
    features_digest = check_upstream(features_dir, "features", config, force)
    check_upstream(dataset_dir, "dataset", config, force, verify_files=False)
    ontology = load_ontology(config.paths.ontology)
    est = CRNNTagger.load(run_dir / "model.ckpt")
    meta_task = json.loads((run_dir / MANIFEST).read_text())["extra"]["task"]
    if meta_task != task:
        raise PipelineError(f"{run_dir} holds a {meta_task!r} model, not {task!r}")
    split = _fold(folds_dir, fold)
    std = _standardizer(features_dir, fold)
    X, _ = load_split(features_dir, split.test, std, task_columns(ontology, task))
    P = est.predict_proba(X)
    dataset = {r["id"]: r for r in read_dataset(dataset_dir)}
    tracks = [read_annotation(Path(dataset_dir) / dataset[i]["annotation"]) for i in split.test]
    ev = config.evaluation
    hop_s = config.features.hop_length / config.features.sample_rate
    result, predicted = score_predictions(P, tracks, ontology, task, hop_s,
                                          ev.asc_threshold, ev.sed_threshold, ev.segment_s)
    result["fold"] = fold
    result["epochs_to_converge"] = est.epochs_to_converge_
    outputs = [write_annotation(tr, run_dir / "predictions" / f"{rid}.txt")
               for rid, tr in zip(split.test, predicted)]
    eval_path = run_dir / "eval.json"
    eval_path.write_text(json.dumps(_clean(result), indent=1, sort_keys=True) + "\n")
    outputs.append(eval_path)
    # the run directory already has the training manifest; evaluation gets its own
    eval_dir = run_dir / "eval_manifest"
    eval_dir.mkdir(exist_ok=True)
    manifest = {"stage": "evaluate", "config_hash": stage_hash(config, "evaluate"),
                "inputs": {"run_manifest": run_digest, "features_manifest": features_digest},
                "outputs": {p.relative_to(run_dir).as_posix(): file_digest(p)
                            for p in sorted(outputs)},
                "versions": versions()}
    (eval_dir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return result


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------- experiment

def ensure_data(config: ExperimentConfig, layout: Layout, force: bool = False):
    """Run corpus, synthesis, folds and features stages whose manifest is missing."""
    steps = [
        (layout.corpus, lambda: cmd_prepare_corpus(config, config.paths.events, layout.corpus)),
        (layout.dataset, lambda: cmd_synthesize(config, layout.corpus, config.paths.backgrounds,
                                                layout.dataset, force)),
        (layout.folds, lambda: cmd_make_folds(config, layout.dataset, layout.folds, force)),
        (layout.features, lambda: cmd_featurize(config, layout.dataset, layout.folds,
                                                layout.features, force)),
    ]
    for (out_dir, run), stage in zip(steps, ("corpus", "dataset", "folds", "features")):
        if (out_dir / MANIFEST).exists():
            check_upstream(out_dir, stage, config, force)
        else:
            logger.info("running stage %s", stage)
            run()


def cmd_compare(config: ExperimentConfig, work_dir=None, force: bool = False,
                tasks=("asc", "sed", "joint")) -> dict:
    """Separate ASC / SED models against the joint model over every fold.

    Returns ``{"reports": {task: EvalReport}, "table": str}`` and writes
    ``reports/compare.json`` and ``reports/compare.txt``.
    """
    layout = Layout.from_config(config, work_dir)
    ensure_data(config, layout, force)
    n_folds = len(load_folds(layout.folds))
    per_task = {}
    for task in tasks:
        fold_metrics = []
        for fold in range(n_folds):
            run_dir = layout.run_dir(task, fold)
            logger.info("training %s fold %d", task, fold)
            cmd_train(config, task, fold, layout.features, layout.folds, run_dir, force)
            fold_metrics.append(cmd_evaluate(config, task, fold, run_dir, layout.features,
                                             layout.folds, layout.dataset, force))
        per_task[task] = cross_fold_report(fold_metrics, task)

    rows = {}
    if "asc" in per_task or "sed" in per_task:
        sep = cross_fold_report([], "separate")
        if "asc" in per_task:
            sep.asc_accuracy = per_task["asc"].asc_accuracy
        if "sed" in per_task:
            sep.sed_f1, sep.sed_er = per_task["sed"].sed_f1, per_task["sed"].sed_er
        rows["Separate models"] = sep
    if "joint" in per_task:
        rows["Joint model"] = per_task["joint"]
    table = format_table(rows)
    epochs = {t: r.epochs_to_converge for t, r in per_task.items()}
    table += "\nEpochs to converge (mean σ std): " + ", ".join(
        f"{t} {m:.1f} σ {s:.1f}" for t, (m, s) in epochs.items()) + "\n"
    baseline = {t: [f.get("silent_baseline_f1") for f in r.folds]
                for t, r in per_task.items() if t != "asc"}

    layout.reports.mkdir(parents=True, exist_ok=True)
    doc = {"tasks": {t: r.to_dict() for t, r in per_task.items()},
           "table_rows": {name: r.to_dict() for name, r in rows.items()},
           "epochs_to_converge": epochs, "silent_baseline_f1": baseline}
    json_path = layout.reports / "compare.json"
    json_path.write_text(json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n")
    txt_path = layout.reports / "compare.txt"
    txt_path.write_text(table)
    inputs = {f"run/{t}/fold{k}": file_digest(layout.run_dir(t, k) / MANIFEST)
              for t in per_task for k in range(n_folds)}
    write_manifest(layout.reports, "evaluate", config, inputs, [json_path, txt_path])
    return {"reports": per_task, "rows": rows, "table": table}


# ---------------------------------------------------------------- gradient check

def cmd_gradient_check(epsilon: float = 1e-6, tolerance: float = 1e-4, seed: int = 0,
                       out_path=None) -> dict:
    """Finite-difference check of the reduced network (16 frames, 16 mels, 2 conv blocks)."""
    from .nn.gradcheck import gradient_check
    from .nn.network import CRNN, NetworkConfig

    rng = np.random.default_rng(seed)
    cfg = NetworkConfig(n_mels=16, n_outputs=5, conv_filters=(4, 6),
                        conv_kernels=((3, 3), (2, 2)), pool_kernels=((3, 3), (2, 2)),
                        batchnorm_blocks=(True, True), lstm_units=5, dense_units=6)
    net = CRNN(cfg, seed=seed, dtype=np.float64)
    x = rng.standard_normal((2, 16, 16, 2))
    y = (rng.random((2, 16, 5)) < 0.3).astype(np.float64)
    report = gradient_check(net, x, y, epsilon=epsilon, tolerance=tolerance, seed=seed)
    doc = {"passed": report.passed, "max_relative_error": report.max_relative_error,
           "tolerance": tolerance, "epsilon": epsilon, "per_group": report.per_group}
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    doc["summary"] = report.summary()
    return doc


def cmd_procedural_corpus(out_dir, ontology="desk", sources_per_class: int = 4,
                          locations_per_scene: int = 3, background_duration: float = 6.0,
                          seed: int = 0) -> dict:
    """Write a synthetic event and background corpus for ``ontology``."""
    from .procedural import write_procedural_corpus
    paths = write_procedural_corpus(out_dir, load_ontology(ontology), sources_per_class,
                                    locations_per_scene, background_duration, seed=seed)
    return {k: str(v) for k, v in paths.items()}


__all__ = [
    "PipelineError", "StaleInputError", "Layout", "TASKS", "stage_hash", "check_upstream",
    "cmd_prepare_corpus", "cmd_synthesize", "cmd_make_folds", "cmd_featurize", "cmd_train",
    "cmd_evaluate", "cmd_compare", "cmd_gradient_check", "cmd_procedural_corpus",
    "score_predictions", "task_columns", "load_corpus", "read_dataset",
]
