import pytest

from followupqa.config import ConfigError, RunConfig, load_config, profile_config


class TestValidation:
    def test_defaults_are_valid(self):
        config = RunConfig().validate()
        assert config.seed == 13
        assert config.null_threshold == 0.0

    def test_positive_fields_enforced(self):
        with pytest.raises(ConfigError, match="batch_size"):
            RunConfig(batch_size=0).validate()
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig(learning_rate=-1.0).validate()

    def test_null_threshold_may_be_non_positive(self):
        RunConfig(null_threshold=0.0).validate()
        RunConfig(null_threshold=-3.5).validate()

    def test_dev_fraction_range(self):
        with pytest.raises(ConfigError):
            RunConfig(dev_fraction=1.5).validate()


class TestOverrides:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig().apply({"not_a_key": "1"})

    def test_typed_parsing(self):
        config = RunConfig().apply({"seed": "7", "learning_rate": "0.01", "coverage": "true", "data_dir": "dd"})
        assert config.seed == 7
        assert config.learning_rate == 0.01
        assert config.coverage is True
        assert config.data_dir == "dd"

    def test_bool_spellings(self):
        assert RunConfig().apply({"coverage": "on"}).coverage is True
        assert RunConfig().apply({"coverage": "0"}).coverage is False
        with pytest.raises(ConfigError):
            RunConfig().apply({"coverage": "maybe"})

    def test_bad_int(self):
        with pytest.raises(ConfigError, match="seed"):
            RunConfig().apply({"seed": "x"})


class TestFilesAndProfiles:
    def test_file_roundtrip(self, tmp_path):
        config = RunConfig().apply({"seed": "99", "embed_dim": "48"})
        path = tmp_path / "run.cfg"
        config.to_file(path)
        loaded = RunConfig.from_file(path)
        assert loaded == config

    def test_file_rejects_garbage_lines(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a key value line\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="bad.cfg:1"):
            RunConfig.from_file(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text("# comment\n\nseed = 21\n", encoding="utf-8")
        assert RunConfig.from_file(path).seed == 21

    def test_full_profile_scales_up(self):
        desk = profile_config("desk")
        full = profile_config("full")
        assert full.hidden_dim > desk.hidden_dim
        assert full.vocab_size > desk.vocab_size

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            profile_config("galactic")

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "absent.cfg"), "desk", {})


class TestHash:
    def test_stable(self):
        assert RunConfig().hash() == RunConfig().hash()

    def test_sensitive_to_changes(self):
        assert RunConfig().hash() != RunConfig(seed=14).hash()
