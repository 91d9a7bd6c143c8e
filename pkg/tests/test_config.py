"""Tests for the flat key = value configuration format."""

import pytest

from s2tp import config as C
from s2tp.errors import ConfigError


class TestParsing:
    def test_defaults_validate(self):
        assert C.parse_text("") == C.defaults()

    def test_values_comments_and_blanks(self):
        cfg = C.parse_text("\n# full line comment\nd = 32\nheads=2 # inline\n\nnoise_std = 0.5\nuse_input_processor = false\n")
        assert cfg["d"] == 32 and cfg["heads"] == 2
        assert cfg["noise_std"] == 0.5
        assert cfg["use_input_processor"] is False

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="latent_count"):
            C.parse_text("latent_count = 4")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="invalid value for d"):
            C.parse_text("d = many")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            C.parse_text("d 32")

    def test_overrides(self):
        cfg = C.parse_text("seed = 1", {"seed": 7})
        assert cfg["seed"] == 7
        with pytest.raises(ConfigError):
            C.parse_text("", {"bogus": 1})

    def test_bool_spellings(self):
        for text, want in (("true", True), ("1", True), ("yes", True),
                           ("false", False), ("0", False), ("no", False)):
            assert C.parse_text(f"use_input_processor = {text}")["use_input_processor"] is want
        with pytest.raises(ConfigError):
            C.parse_text("use_input_processor = maybe")


class TestValidation:
    @pytest.mark.parametrize("text", [
        "family = rnn",
        "task_mode = sort",
        "conv_stride = 3",
        "d = 66\nheads = 4",
        "d = 63\nheads = 63",
        "train_latents = 65",
        "k_prime = 65",
        "patience = 0",
        "dropout = 1.0",
        "label_smoothing = -0.1",
        "t_min = 9\nt_max = 5",
        "beam = 0",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            C.parse_text(text)


class TestRoundTrip:
    def test_dump_parse_identity(self):
        cfg = C.defaults()
        cfg.update(d=32, heads=2, dropout=0.05, use_input_processor=False,
                   task_mode="reverse", lr=0.0015)
        assert C.parse_text(C.dump(cfg)) == cfg

    def test_load(self, tmp_path):
        path = tmp_path / "model.cfg"
        path.write_text("d = 32\nheads = 2\n")
        assert C.load(str(path))["d"] == 32
