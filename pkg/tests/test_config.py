"""
Tests for run-config parsing, validation and CLI overrides.
"""

import argparse

import pytest

from errors import ConfigurationError
from main import build_parser, cli_overrides
from schemas.run_config import documented_defaults, parse_config, parse_pairs, parse_value


class TestParsing:
    def test_minimal_config_uses_defaults(self):
        config = parse_config("command = train\nseed = 3\n")
        assert config.seed == 3
        assert config.train.K == 8 and config.train.k == 64
        assert config.data.kind == "gmm"
        assert config.model.encoder_hidden == [128, 128, 128]
        assert config.schedule.lambda_min == -12.0

    def test_values_lists_and_comments(self):
        text = """
        # a comment line
        command = sample
        model.encoder_hidden = [32, 32]   # inline comment
        model.multi_level = false
        sampler.trace_out = "trace#1.csv"
        guidance.w = 1.5
        """
        config = parse_config(text)
        assert config.model.encoder_hidden == [32, 32]
        assert config.model.multi_level is False
        assert config.sampler.trace_out == "trace#1.csv"
        assert config.guidance.w == 1.5

    def test_parse_value(self):
        assert parse_value("[]") == []
        assert parse_value(" 7 ") == 7
        assert parse_value("1e-3") == 1e-3
        assert parse_value("None") is None
        assert parse_value("gmm") == "gmm"

    def test_rates_must_divide(self):
        with pytest.raises(ConfigurationError, match="train.*must divide"):
            parse_config("command = train\ntrain.K = 3\ntrain.k = 8\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigurationError, match="train.steps: duplicate key"):
            parse_pairs("train.steps = 1\ntrain.steps = 2\n")

    def test_unknown_key_reports_path(self):
        with pytest.raises(ConfigurationError, match="train.bogus"):
            parse_config("command = train\ntrain.bogus = 1\n")

    def test_type_mismatch_reports_path(self):
        with pytest.raises(ConfigurationError, match="train.steps"):
            parse_config("command = train\ntrain.steps = many\n")

    def test_missing_command(self):
        with pytest.raises(ConfigurationError, match="command"):
            parse_config("seed = 1\n")

    def test_line_without_equals(self):
        with pytest.raises(ConfigurationError, match="line 2"):
            parse_pairs("command = train\njust words\n")

    def test_section_used_as_value(self):
        with pytest.raises(ConfigurationError):
            parse_config("command = train\ntrain = 3\ntrain.steps = 2\n")

    def test_translation_needs_grid_data(self):
        with pytest.raises(ConfigurationError, match="translate_prob"):
            parse_config("command = train\naugment.translate_prob = 0.5\n")
        config = parse_config("command = train\ndata.kind = grid\naugment.translate_prob = 0.5\n")
        assert config.train_config().translate_prob == 0.5

    def test_multi_level_needs_deep_encoder(self):
        with pytest.raises(ConfigurationError, match="multi_level"):
            parse_config("command = train\nmodel.encoder_hidden = [8]\nmodel.denoiser_hidden = [8, 8]\n")

    def test_overrides_win(self):
        config = parse_config("command = train\ntrain.K = 4\n", {"train.K": 8, "seed": 5, "guidance.w": None})
        assert config.train.K == 8
        assert config.seed == 5


class TestDerivedConfigs:
    def test_clip_defaults_follow_data(self):
        assert parse_config("command = sample\ndata.kind = grid\n").sample_config().clip is True
        assert parse_config("command = sample\n").sample_config().clip is False
        assert parse_config("command = sample\nsampler.clip = true\n").sample_config().clip is True

    def test_class_dropout_only_when_conditional(self):
        assert parse_config("command = train\n").train_config().class_drop_p == 0.0
        config = parse_config("command = train\nmodel.class_conditional = true\n")
        assert config.train_config().class_drop_p == 0.1

    def test_trace_enables_state_recording(self):
        config = parse_config("command = sample\nsampler.trace_out = t.csv\n")
        assert config.sample_config().record_states is True

    def test_distill_divergence_threshold_flows_through(self):
        assert parse_config("command = distill\n").distill_config().divergence_threshold == 1e9
        config = parse_config("command = distill\ndistill.divergence_threshold = 2.5e12\n")
        assert config.distill_config().divergence_threshold == 2.5e12
        with pytest.raises(ConfigurationError, match="distill.divergence_threshold"):
            parse_config("command = distill\ndistill.divergence_threshold = 0\n")

    def test_cost_model(self):
        cost = parse_config("command = eval\neval.c_encoder = 2.0\n").cost_model()
        assert cost.c_encoder == 2.0 and cost.c_denoiser == 44.02

    def test_documented_defaults_cover_sections(self):
        keys = {key for key, _, _ in documented_defaults()}
        assert {"train.K", "sampler.noise_interp", "distill.variant", "schedule.lambda_min", "seed"} <= keys


class TestCliOverrides:
    def _args(self, *argv) -> argparse.Namespace:
        return build_parser().parse_args(list(argv))

    def test_rate_flags_follow_command(self):
        assert cli_overrides(self._args("sample", "c.cfg", "--K", "4", "--k", "16")) == {
            "command": "sample", "sampler.K": 4, "sampler.k": 16,
        }
        assert cli_overrides(self._args("train", "c.cfg", "--K", "2"))["train.K"] == 2
        assert cli_overrides(self._args("distill", "c.cfg", "--k", "8"))["distill.k"] == 8

    def test_sample_count_flag(self):
        assert cli_overrides(self._args("eval", "c.cfg", "--n", "10"))["eval.n_samples"] == 10
        assert cli_overrides(self._args("sample", "c.cfg", "--n", "10"))["sampler.n"] == 10

    def test_distill_flags(self):
        overrides = cli_overrides(self._args("distill", "c.cfg", "--variant", "rollout", "--teacher", "t.ckpt"))
        assert overrides["distill.variant"] == "rollout"
        assert overrides["distill.teacher"] == "t.ckpt"
