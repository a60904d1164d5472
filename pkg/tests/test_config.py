"""Configuration layering, strict key checking, and override typing."""

import pytest
import yaml

from swisd.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config_file,
    resolve_config,
    write_resolved_config,
)


class TestDefaults:
    def test_empty_document_gives_defaults(self):
        config = config_from_dict({})
        assert config.seed == 0
        assert config.pretrain.epochs == 500
        assert config.pretrain.base_lr == 1e-3
        assert config.pretrain.warmup_epochs == 10
        assert config.downstream.epochs == 500
        assert config.downstream.lr == 1e-4
        assert config.downstream.fraction == 0.10
        assert config.loss.variant == "literal"
        assert config.encoder.arch == "resnet50"
        assert config.encoder.feature_dim == 2048
        assert config.analysis.rho0 == 0.8
        assert config.analysis.alpha == 0.05
        assert config.data.iam_test_fraction == 0.5

    def test_none_document(self):
        assert config_from_dict(None) == ExperimentConfig()

    def test_pretrain_config_merges_loss_section(self):
        config = config_from_dict(
            {"loss": {"variant": "scaled", "eps": 0.0}, "pretrain": {"epochs": 7, "warmup_epochs": 2}}
        )
        pc = config.pretrain_config()
        assert pc.loss_variant == "scaled"
        assert pc.eps == 0.0
        assert pc.epochs == 7

    def test_probe_config_mapping(self):
        config = config_from_dict({"downstream": {"lr": 0.5, "finetune_mode": "linear_only"}})
        probe = config.probe_config()
        assert probe.lr == 0.5
        assert probe.finetune_mode == "linear_only"

    def test_augment_params_mapping(self):
        config = config_from_dict({"preprocess": {"brightness": 0.1, "crop_scale_min": 0.9}})
        params = config.preprocess.augment_params()
        assert params.brightness == 0.1
        assert params.crop_scale_min == 0.9
        assert params.crop_scale_max == 1.0


class TestStrictKeys:
    def test_unknown_section_key_names_dotted_path(self):
        with pytest.raises(ConfigError, match=r"unknown key: pretrain\.learnrate"):
            config_from_dict({"pretrain": {"learnrate": 0.1}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown key: pertrain"):
            config_from_dict({"pertrain": {}})

    def test_non_mapping_section(self):
        with pytest.raises(ConfigError, match="must be a mapping"):
            config_from_dict({"loss": [1, 2]})

    def test_seed_must_be_integer(self):
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"seed": "abc"})
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict({"seed": True})

    @pytest.mark.parametrize(
        "doc,section",
        [
            ({"pretrain": {"epochs": 0}}, "pretrain"),
            ({"pretrain": {"warmup_epochs": 900}}, "pretrain"),
            ({"loss": {"variant": "exotic"}}, "pretrain"),
            ({"downstream": {"lr": -1}}, "downstream"),
            ({"downstream": {"finetune_mode": "half"}}, "downstream"),
            ({"encoder": {"arch": "vit"}}, "encoder"),
            ({"encoder": {"feature_dim": 99}}, "encoder"),
        ],
    )
    def test_semantic_validation_names_section(self, doc, section):
        with pytest.raises(ConfigError, match=f"section '{section}'"):
            config_from_dict(doc)


class TestOverrides:
    def test_values_parse_as_yaml_scalars(self):
        doc = apply_overrides(
            {}, ["pretrain.epochs=2", "downstream.augment=false", "loss.eps=1e-6", "data.dataset=CVL"]
        )
        assert doc["pretrain"]["epochs"] == 2
        assert doc["downstream"]["augment"] is False
        assert doc["loss"]["eps"] == 1e-6
        assert doc["data"]["dataset"] == "CVL"

    def test_plain_scientific_notation_becomes_float(self):
        # PyYAML alone would keep these as strings (YAML 1.1 float syntax)
        doc = apply_overrides({}, ["pretrain.base_lr=2.5e3", "loss.eps=1E-8"])
        assert doc["pretrain"]["base_lr"] == 2500.0
        assert doc["loss"]["eps"] == 1e-8

    def test_override_wins_over_file_value(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("pretrain:\n  epochs: 100\n  batch_size: 8\n")
        config = resolve_config(path, ["pretrain.epochs=50"])
        assert config.pretrain.epochs == 50
        assert config.pretrain.batch_size == 8

    def test_seed_flag_beats_file_and_override(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 1\n")
        assert resolve_config(path, ["seed=2"], seed=3).seed == 3
        assert resolve_config(path, ["seed=2"]).seed == 2
        assert resolve_config(path, []).seed == 1

    def test_top_level_seed_assignment(self):
        assert config_from_dict(apply_overrides({}, ["seed=42"])).seed == 42

    def test_malformed_assignment(self):
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides({}, ["pretrain.epochs"])

    def test_three_part_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            apply_overrides({}, ["a.b.c=1"])

    def test_overriding_scalar_as_section_rejected(self):
        with pytest.raises(ConfigError, match="not a section"):
            apply_overrides({"seed": 3}, ["seed.x=1"])

    def test_input_document_not_mutated(self):
        doc = {"pretrain": {"epochs": 5}}
        apply_overrides(doc, ["pretrain.epochs=9"])
        assert doc["pretrain"]["epochs"] == 5

    def test_unknown_override_key_fails_at_parse(self):
        doc = apply_overrides({}, ["pretrain.momentum=0.9"])
        with pytest.raises(ConfigError, match=r"unknown key: pretrain\.momentum"):
            config_from_dict(doc)


class TestFiles:
    def test_yaml_file_round_trip(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(
            "seed: 5\n"
            "encoder:\n  arch: small_cnn\n  feature_dim: 64\n  small_cnn_channels: [4, 8, 12]\n"
            "pretrain:\n  epochs: 3\n  warmup_epochs: 1\n"
        )
        config = resolve_config(path)
        assert config.seed == 5
        assert config.encoder.small_cnn_channels == (4, 8, 12)
        assert config.encoder.feature_dim == 64

    def test_empty_file_is_defaults(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config_file(path) == {}
        assert resolve_config(path) == ExperimentConfig()

    def test_non_mapping_file_rejected(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config_file(path)

    def test_resolved_echo_parses_back_identically(self, tmp_path):
        config = config_from_dict(
            {
                "seed": 9,
                "encoder": {"arch": "small_cnn", "feature_dim": 16, "small_cnn_channels": [2, 4]},
                "pretrain": {"epochs": 4, "warmup_epochs": 0},
            }
        )
        path = write_resolved_config(config, tmp_path)
        assert path.name == "config.resolved"
        reparsed = config_from_dict(yaml.safe_load(path.read_text()))
        assert reparsed == config

    def test_resolved_document_lists_every_section(self, tmp_path):
        path = write_resolved_config(ExperimentConfig(), tmp_path)
        doc = yaml.safe_load(path.read_text())
        assert set(doc) == {
            "seed", "data", "preprocess", "encoder", "loss", "pretrain", "downstream", "analysis",
        }
