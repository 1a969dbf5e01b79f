import json

import numpy as np
import pytest

from jointscene.annotations import read_annotation
from jointscene.config import ExperimentConfig
from jointscene.ontology import desk_ontology, load_ontology
from jointscene.pipeline import (MANIFEST, Layout, PipelineError, StaleInputError,
                                 check_upstream, cmd_evaluate, cmd_make_folds,
                                 cmd_prepare_corpus, cmd_train, ensure_data, file_digest,
                                 read_dataset, score_predictions, stage_hash, task_columns)
from tinyrun import tiny_config, tiny_sources


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    config = tiny_config(root)
    layout = Layout.from_config(config)
    ensure_data(config, layout)
    return config, layout


def test_prepare_corpus_triples_sources_and_is_idempotent(tiny, tmp_path):
    config, layout = tiny
    manifest = json.loads((layout.corpus / MANIFEST).read_text())
    assert manifest["extra"] == {"n_sources": 12, "n_entries": 36}
    again = cmd_prepare_corpus(config, config.paths.events, tmp_path / "corpus")
    assert (again / MANIFEST).read_bytes() == (layout.corpus / MANIFEST).read_bytes()
    assert (again / "index.csv").read_bytes() == (layout.corpus / "index.csv").read_bytes()


def test_missing_source_file_is_listed(tmp_path):
    sources = tiny_sources(tmp_path)
    victim = tmp_path / "sources" / "events" / "hum_001.wav"
    victim.unlink()
    with pytest.raises(PipelineError, match="hum_001.wav") as info:
        cmd_prepare_corpus(tiny_config(tmp_path, sources), sources["events"], tmp_path / "c")
    assert info.value.details["missing"] == [str(victim)]


def test_dataset_cardinality_and_annotations(tiny):
    config, layout = tiny
    rows = read_dataset(layout.dataset)
    # 3 scenes x 2 locations x 2 scenes per background x 3 pitch variants
    assert len(rows) == 36
    assert sorted({int(r["pitch_shift"]) == 0 for r in rows}) == [False, True]
    ontology = desk_ontology()
    for r in rows:
        track = read_annotation(layout.dataset / r["annotation"])
        assert track.scene_label == r["scene_class"] and track.duration == 2.0
        allowed = set(ontology.compatible_events(r["scene_class"]))
        assert {label for _, _, label in track.as_tuples()} <= allowed


def test_folds_and_features_manifests(tiny):
    config, layout = tiny
    sizes = json.loads((layout.folds / MANIFEST).read_text())["extra"]["sizes"]
    assert sizes == [[9, 9, 18], [9, 9, 18]]
    extra = json.loads((layout.features / MANIFEST).read_text())["extra"]
    assert extra["n_recordings"] == 36 and extra["label_columns"] == 10


def test_stage_hashes_are_cumulative():
    a = ExperimentConfig.desk()
    b = a.with_overrides({"training.learning_rate": 0.01})
    c = a.with_overrides({"synthesis.duration": 4.0})
    assert stage_hash(a, "features") == stage_hash(b, "features")
    assert stage_hash(a, "train") != stage_hash(b, "train")
    assert all(stage_hash(a, s) != stage_hash(c, s)
               for s in ("dataset", "folds", "features", "train", "evaluate"))
    assert stage_hash(a, "corpus") == stage_hash(c, "corpus")


def test_stale_upstream_is_refused_unless_forced(tiny, tmp_path):
    config, layout = tiny
    changed = config.with_overrides({"synthesis.snr_range": [-5.0, 5.0]})
    with pytest.raises(StaleInputError, match="stale") as info:
        cmd_make_folds(changed, layout.dataset, tmp_path / "folds")
    assert any("config hash" in p for p in info.value.details["problems"])
    assert (cmd_make_folds(changed, layout.dataset, tmp_path / "folds", force=True)
            / "folds.json").exists()


def test_modified_output_is_detected(tiny, tmp_path):
    config, layout = tiny
    copy = tmp_path / "dataset"
    copy.mkdir()
    for name in (MANIFEST, "dataset.csv"):
        (copy / name).write_bytes((layout.dataset / name).read_bytes())
    with pytest.raises(StaleInputError):
        # every audio file is missing from the copy
        check_upstream(copy, "dataset", config)
    assert check_upstream(copy, "dataset", config, verify_files=False) == \
        file_digest(copy / MANIFEST)


def test_missing_stage_is_reported(tmp_path):
    with pytest.raises(PipelineError, match="has not been run"):
        check_upstream(tmp_path, "dataset", ExperimentConfig.desk())


def test_task_columns():
    desk = desk_ontology()
    widths = {t: len(range(desk.n_labels)[task_columns(desk, t)]) for t in ("joint", "asc", "sed")}
    assert widths == {"joint": 10, "asc": 3, "sed": 6}
    assert task_columns(desk, "sed").start == 3
    full = load_ontology("full")
    assert task_columns(full, "sed") == slice(10, 42)
    with pytest.raises(PipelineError, match="unknown task"):
        task_columns(desk, "music")


def test_score_predictions_on_reference_labels(tiny):
    config, layout = tiny
    ontology = desk_ontology()
    rows = read_dataset(layout.dataset)[:12]
    index = {r["id"]: r for r in read_dataset(layout.dataset)}
    tracks = [read_annotation(layout.dataset / index[r["id"]]["annotation"]) for r in rows]
    P = [np.load(layout.features / "labels" / f"{r['id']}.npy").astype(float) for r in rows]
    hop = config.features.hop_length / config.features.sample_rate
    result, predicted = score_predictions(P, tracks, ontology, "joint", hop)
    assert result["asc_accuracy"] == 1.0
    assert [p.scene_label for p in predicted] == [t.scene_label for t in tracks]
    # frame quantization can spill an offset into the next 1 s segment, never lose one
    assert result["counts"]["fn"] == 0 and result["sed_f1"] > 90.0
    assert result["silent_baseline_f1"] == 0.0
    sed, _ = score_predictions([p[:, 3:9] for p in P], tracks, ontology, "sed", hop)
    assert "asc_accuracy" not in sed and sed["sed_f1"] == result["sed_f1"]
    asc, _ = score_predictions([p[:, :3] for p in P], tracks, ontology, "asc", hop)
    assert asc["asc_accuracy"] == 1.0 and "sed_f1" not in asc


def test_train_and_evaluate_one_fold(tiny):
    config, layout = tiny
    run_dir = layout.run_dir("sed", 0)
    cmd_train(config, "sed", 0, layout.features, layout.folds, run_dir)
    manifest = json.loads((run_dir / MANIFEST).read_text())
    assert manifest["extra"]["n_outputs"] == 6 and manifest["extra"]["n_train"] == 9
    assert manifest["volatile_outputs"] == ["history.csv"]
    result = cmd_evaluate(config, "sed", 0, run_dir, layout.features, layout.folds,
                          layout.dataset)
    assert result["n_test"] == 18 and 0.0 <= result["sed_f1"] <= 100.0
    assert len(list((run_dir / "predictions").glob("*.txt"))) == 18
    assert json.loads((run_dir / "eval.json").read_text())["fold"] == 0
    with pytest.raises(PipelineError, match="not 'joint'"):
        cmd_evaluate(config, "joint", 0, run_dir, layout.features, layout.folds, layout.dataset)
    # a changed training setting makes the stored model stale for evaluation
    changed = config.with_overrides({"training.learning_rate": 0.5})
    with pytest.raises(StaleInputError):
        cmd_evaluate(changed, "sed", 0, run_dir, layout.features, layout.folds, layout.dataset)
