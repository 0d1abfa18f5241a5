"""Run configuration parsing, validation, and serialization."""

import dataclasses

import pytest

from hypevents.config import (
    ConfigError,
    RunConfig,
    config_to_text,
    load_config,
    parse_config_text,
)


class TestValidate:
    def test_defaults_are_valid(self):
        RunConfig().validate()

    def test_every_violation_reported_at_once(self):
        config = dataclasses.replace(
            RunConfig(), lm_d_model=-1, mtl_dropout=1.5,
            decode_strategy="beam", seeds=(), provider="oracle")
        with pytest.raises(ConfigError) as err:
            config.validate()
        message = str(err.value)
        assert message.startswith("invalid configuration:")
        for fragment in ("lm_d_model", "mtl_dropout", "decode_strategy",
                         "seeds", "provider"):
            assert fragment in message

    def test_head_divisibility_checked(self):
        config = dataclasses.replace(RunConfig(), mtl_d_model=10,
                                     mtl_n_heads=4)
        with pytest.raises(ConfigError, match="divisible"):
            config.validate()

    def test_duplicate_seeds_rejected(self):
        config = dataclasses.replace(RunConfig(), seeds=(1, 2, 1))
        with pytest.raises(ConfigError, match="duplicates"):
            config.validate()

    def test_eval_split_needs_examples(self):
        config = dataclasses.replace(RunConfig(), eval_split="test", n_test=0)
        with pytest.raises(ConfigError, match="n_test"):
            config.validate()

    def test_rho_bounds(self):
        config = dataclasses.replace(RunConfig(), synthetic_rho=1.2)
        with pytest.raises(ConfigError, match="synthetic_rho"):
            config.validate()

    def test_zero_epochs_allowed(self):
        dataclasses.replace(RunConfig(), lm_epochs=0, mtl_epochs=0).validate()

    def test_dataset_paths_must_pair(self):
        config = dataclasses.replace(RunConfig(), corpus_path="x.jsonl")
        with pytest.raises(ConfigError, match="instances_path"):
            config.validate()
        dataclasses.replace(RunConfig(), corpus_path="x.jsonl",
                            instances_path="y.jsonl").validate()


class TestParse:
    def test_empty_text_gives_defaults(self):
        assert parse_config_text("") == RunConfig()

    def test_overrides_applied(self):
        config = parse_config_text(
            "lm_epochs = 3\nsynthetic_rho = 0.5\nout_dir = runs\n")
        assert config.lm_epochs == 3
        assert config.synthetic_rho == 0.5
        assert config.out_dir == "runs"

    def test_comments_and_blank_lines_skipped(self):
        config = parse_config_text(
            "# a note\n\n   \nlm_epochs = 2\n# lm_epochs = 9\n")
        assert config.lm_epochs == 2

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2.*banana"):
            parse_config_text("lm_epochs = 2\nbanana = 1\n")

    def test_duplicate_key_names_line(self):
        with pytest.raises(ConfigError, match="line 3.*duplicate"):
            parse_config_text("lm_epochs = 2\n\nlm_epochs = 4\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("lm_epochs 2\n")

    def test_bad_int_rejected(self):
        with pytest.raises(ConfigError, match="integer"):
            parse_config_text("lm_epochs = two\n")

    def test_bad_float_rejected(self):
        with pytest.raises(ConfigError, match="number"):
            parse_config_text("synthetic_rho = half\n")

    def test_seeds_list(self):
        assert parse_config_text("seeds = 1, 2, 3\n").seeds == (1, 2, 3)
        assert parse_config_text("seeds = 7\n").seeds == (7,)

    def test_bad_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config_text("seeds = 1, x\n")

    def test_empty_corpus_path_means_synthetic(self):
        assert parse_config_text("corpus_path = \n").corpus_path is None
        assert parse_config_text(
            "corpus_path = data/stories.jsonl\n").corpus_path == \
            "data/stories.jsonl"

    def test_base_config_respected(self):
        base = dataclasses.replace(RunConfig(), lm_epochs=9)
        config = parse_config_text("mtl_epochs = 4\n", base=base)
        assert config.lm_epochs == 9
        assert config.mtl_epochs == 4


class TestRoundTrip:
    def test_defaults_round_trip(self):
        config = RunConfig()
        assert parse_config_text(config_to_text(config)) == config

    def test_custom_round_trip(self):
        config = dataclasses.replace(
            RunConfig(), corpus_path="x.jsonl", seeds=(3, 1, 4),
            synthetic_rho=0.25, decode_strategy="topk", decode_k=3,
            aux_label_mode="bertscore", provider="lm", eval_split="test",
            n_test=10)
        assert parse_config_text(config_to_text(config)) == config

    def test_text_is_sorted_and_stable(self):
        text = config_to_text(RunConfig())
        keys = [line.split(" = ")[0] for line in text.splitlines()]
        assert keys == sorted(keys)
        assert config_to_text(RunConfig()) == text


class TestLoad:
    def test_load_reads_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("lm_epochs = 5\n", encoding="utf-8")
        assert load_config(path).lm_epochs == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_parse_error_names_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("banana = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="run.cfg"):
            load_config(path)


class TestBridges:
    def test_seed_injected_into_stage_configs(self):
        config = RunConfig()
        assert config.lm_config(11).seed == 11
        assert config.mtl_config(12).seed == 12
        assert config.decode_spec(13).seed == 13
        assert config.synthetic_spec(14).seed == 14

    def test_stage_fields_carried(self):
        config = dataclasses.replace(
            RunConfig(), lm_epochs=4, mtl_epochs=6, decode_k=9,
            decode_strategy="topk", synthetic_n_stories=33,
            aux_label_mode="bertscore")
        assert config.lm_config(0).epochs == 4
        mtl = config.mtl_config(0)
        assert mtl.epochs == 6
        assert mtl.aux_label_mode == "bertscore"
        spec = config.decode_spec(0)
        assert spec.k == 9
        assert spec.strategy == "topk"
        assert config.synthetic_spec(0).n_stories == 33
