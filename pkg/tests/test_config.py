"""Config parsing: defaults, coercion, rejection of unknown keys."""

import dataclasses

import pytest

from difftrack.backbone import create_backbone
from difftrack.config import (
    BackboneConfig,
    EvalConfig,
    RunConfig,
    dump_defaults,
    load_config,
    parse_layers,
)
from difftrack.synthetic import DEFAULT_LAYERS, SyntheticBackbone


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


class TestParsing:
    def test_empty_path_gives_defaults(self, monkeypatch):
        monkeypatch.delenv("DIFFTRACK_CONFIG", raising=False)
        assert load_config() == RunConfig()

    def test_values_parsed_and_coerced(self, tmp_path):
        path = write(tmp_path, """
[backbone]
kind = synthetic
resolution = 128
layers = 32x8, 16x8
seed = 3

[updater]
start_frame = 10
lr = 2e-4

[eval]
protocol = vot
jobs = 4
""")
        cfg = load_config(path)
        assert cfg.backbone.resolution == 128
        assert cfg.backbone.layers == ((32, 8), (16, 8))
        assert cfg.backbone.seed == 3
        assert cfg.updater.start_frame == 10
        assert cfg.updater.lr == pytest.approx(2e-4)
        assert cfg.eval.protocol == "vot"
        assert cfg.eval.jobs == 4
        assert cfg.learner == RunConfig().learner

    def test_unknown_key_named(self, tmp_path):
        path = write(tmp_path, "[updater]\nstart_frmae = 6\n")
        with pytest.raises(ValueError, match="start_frmae"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write(tmp_path, "[tracker]\ntau = 0.5\n")
        with pytest.raises(ValueError, match="tracker"):
            load_config(path)

    def test_bad_value_names_section_and_key(self, tmp_path):
        path = write(tmp_path, "[backbone]\nresolution = tiny\n")
        with pytest.raises(ValueError, match=r"\[backbone\] resolution"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            load_config(tmp_path / "absent.ini")

    def test_env_fallback(self, tmp_path, monkeypatch):
        path = write(tmp_path, "[backbone]\nresolution = 64\n")
        monkeypatch.setenv("DIFFTRACK_CONFIG", str(path))
        assert load_config().backbone.resolution == 64

    def test_explicit_path_beats_env(self, tmp_path, monkeypatch):
        env_path = write(tmp_path, "[backbone]\nresolution = 64\n")
        monkeypatch.setenv("DIFFTRACK_CONFIG", str(env_path))
        other = tmp_path / "other.ini"
        other.write_text("[backbone]\nresolution = 128\n")
        assert load_config(other).backbone.resolution == 128


class TestValues:
    def test_layer_syntax(self):
        assert parse_layers("") == ()
        assert parse_layers("64x16") == ((64, 16),)
        assert parse_layers(" 64X16 , 8x8 ") == ((64, 16), (8, 8))
        with pytest.raises(ValueError, match="CxS"):
            parse_layers("64-16")
        with pytest.raises(ValueError, match="CxS"):
            parse_layers("64x16x2")

    def test_kind_validated(self):
        with pytest.raises(ValueError, match="kind"):
            BackboneConfig(kind="oracle")

    def test_protocol_validated(self):
        with pytest.raises(ValueError, match="protocol"):
            EvalConfig(protocol="got10k")

    def test_dump_defaults_round_trips(self, tmp_path):
        path = write(tmp_path, dump_defaults())
        assert load_config(path) == RunConfig()

    def test_learner_to_train_config(self):
        cfg = RunConfig().learner
        tc = cfg.to_train_config()
        assert tc.shared_lr == cfg.shared_lr
        assert tc.num_tokens == cfg.num_tokens
        assert "data" not in {f.name for f in dataclasses.fields(type(tc))}

    def test_updater_conversions(self):
        cfg = RunConfig().updater
        assert cfg.to_schedule().start_frame == 6
        assert cfg.to_train_config().clip_len is None


class TestBackboneFactory:
    def test_create_backbone_from_config(self):
        cfg = BackboneConfig(resolution=128, layers=((32, 8), (16, 8)), seed=5)
        bb = create_backbone(cfg)
        assert isinstance(bb, SyntheticBackbone)
        assert bb.input_resolution == 128
        assert bb.num_layers == 2

    def test_empty_layers_take_backbone_default(self):
        bb = create_backbone(BackboneConfig())
        assert bb.num_layers == len(DEFAULT_LAYERS)
