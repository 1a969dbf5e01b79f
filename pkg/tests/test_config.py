import pytest

from jointscene.config import (ConfigError, ExperimentConfig, config_keys,
                               parse_override_value)


def test_defaults_are_full_scale():
    cfg = ExperimentConfig()
    assert cfg.paths.ontology == "full"
    assert (cfg.synthesis.scenes_per_background, cfg.synthesis.duration) == (10, 30.0)
    assert cfg.synthesis.snr_range == (-15.0, 15.0)
    assert (cfg.features.n_fft, cfg.features.hop_length, cfg.features.n_mels) == (2048, 512, 128)
    assert cfg.features.smooth_window == 21
    assert (cfg.folds.k, cfg.folds.validation_fraction) == (5, 0.125)
    assert cfg.network.conv_filters == (64, 128, 256)
    assert (cfg.training.learning_rate, cfg.training.batch_size, cfg.training.max_epochs) == \
        (1e-3, 8, 100)
    assert (cfg.evaluation.asc_threshold, cfg.evaluation.sed_threshold) == (0.9, 0.5)


def test_desk_settings():
    cfg = ExperimentConfig.desk()
    assert cfg.paths.ontology == "desk"
    assert (cfg.synthesis.scenes_per_background, cfg.synthesis.duration) == (8, 5.0)
    assert (cfg.features.n_mels, cfg.folds.k) == (32, 3)
    assert cfg.network.conv_filters == (16, 32, 64)
    # untouched sections keep full-scale defaults
    assert cfg.training.learning_rate == 1e-3
    assert ExperimentConfig.desk(training={"max_epochs": 2}).training.max_epochs == 2


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown config section"):
        ExperimentConfig.from_dict({"model": {}})
    with pytest.raises(ConfigError, match=r"unknown key\(s\) in \[training\]: lr"):
        ExperimentConfig.from_dict({"training": {"lr": 0.1}})
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig().with_overrides({"training.lr": 0.1})


@pytest.mark.parametrize("section,key,value", [
    ("training", "batch_size", 2.5),
    ("training", "early_stopping", "yes"),
    ("synthesis", "snr_range", 3),
    ("features", "n_mels", "many"),
    ("paths", "ontology", 4),
])
def test_type_errors(section, key, value):
    with pytest.raises(ConfigError, match=f"{section}.{key}"):
        ExperimentConfig.from_dict({section: {key: value}})


def test_overrides_coerce_types():
    cfg = ExperimentConfig().with_overrides({"training.batch_size": 4.0,
                                             "synthesis.snr_range": [-5, 5],
                                             "network.conv_kernels": [[2, 2], [2, 2], [1, 1]],
                                             "seed": 3})
    assert cfg.training.batch_size == 4 and isinstance(cfg.training.batch_size, int)
    assert cfg.synthesis.snr_range == (-5, 5)
    assert cfg.network.conv_kernels == ((2, 2), (2, 2), (1, 1))
    assert cfg.seed == 3


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig.desk(synthesis={"snr_range": [-3.0, 4.0]})
    back = ExperimentConfig.load(cfg.dump(tmp_path / "c.yaml"))
    assert back == cfg
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(tmp_path / "missing.yaml")


def test_section_hash_tracks_only_named_sections():
    a = ExperimentConfig()
    b = a.with_overrides({"training.learning_rate": 0.01})
    assert a.section_hash("features") == b.section_hash("features")
    assert a.section_hash("training") != b.section_hash("training")
    assert a.section_hash("seed") != a.with_overrides({"seed": 1}).section_hash("seed")


def test_differences():
    a = ExperimentConfig()
    b = a.with_overrides({"features.n_mels": 64, "seed": 2})
    assert b.differences(a) == {"features.n_mels": [128, 64], "seed": [0, 2]}
    assert a.differences(a) == {}


@pytest.mark.parametrize("text,value", [
    ("5", 5), ("0.5", 0.5), ("true", True), ("desk", "desk"), ("[-10, 10]", [-10, 10]),
    ("1e-3", "1e-3"),
])
def test_parse_override_value(text, value):
    assert parse_override_value(text) == value


def test_exponent_without_dot_is_accepted_for_floats():
    # YAML 1.1 reads "1e-3" as a string
    cfg = ExperimentConfig().with_overrides({"training.learning_rate": parse_override_value("1e-3")})
    assert cfg.training.learning_rate == 1e-3
    with pytest.raises(ConfigError, match="expected a number"):
        ExperimentConfig().with_overrides({"training.learning_rate": "fast"})


def test_parse_override_value_rejects_bad_yaml():
    with pytest.raises(ConfigError):
        parse_override_value("[1, 2")


def test_config_keys_cover_every_field():
    keys = config_keys()
    assert keys[0] == "seed" and "training.learning_rate" in keys
    assert len(keys) == len(set(keys))
