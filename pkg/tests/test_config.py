import json

import pytest

from sflab import config, config_manager
from sflab.config import SEED_STREAMS, derive_seed
from sflab.errors import InvalidInputError


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, "dataset") == derive_seed(7, "dataset")

    def test_streams_are_distinct(self):
        seeds = {derive_seed(7, stream) for stream in SEED_STREAMS}
        assert len(seeds) == len(SEED_STREAMS)

    def test_index_changes_seed(self):
        assert derive_seed(7, "mc", 0) != derive_seed(7, "mc", 1)
        assert derive_seed(7, "mc", 0) != derive_seed(8, "mc", 0)

    def test_fits_in_64_bits(self):
        assert 0 <= derive_seed(123, "init") < 2 ** 64

    def test_negative_seed(self):
        with pytest.raises(InvalidInputError):
            derive_seed(-1, "dataset")


class TestUserDefaults:
    def test_missing_file(self, isolated_config):
        assert not config_manager.config_exists()
        assert config_manager.load_config() == {}
        assert config_manager.get_configured_threads() == 1
        assert config_manager.get_configured_mc_samples(500) == 500

    def test_save_and_load(self, isolated_config):
        assert config_manager.save_config({"threads": 4, "mc_samples": 20_000})
        assert isolated_config.exists()
        assert config_manager.load_config() == {"threads": 4, "mc_samples": 20_000}
        assert config_manager.get_configured_threads() == 4

    def test_unknown_keys_ignored(self, isolated_config):
        isolated_config.parent.mkdir(parents=True)
        isolated_config.write_text("threads: 2\ncolour: blue\n")
        assert config_manager.load_config() == {"threads": 2}

    @pytest.mark.parametrize("text", ["- 1\n- 2\n", "threads: [unclosed\n"])
    def test_unreadable_file_falls_back(self, isolated_config, text):
        isolated_config.parent.mkdir(parents=True)
        isolated_config.write_text(text)
        assert config_manager.load_config() == {}

    @pytest.mark.parametrize("value", [0, -3, "four", 2.5])
    def test_invalid_threads(self, isolated_config, value):
        config_manager.save_config({"threads": value})
        assert config_manager.get_configured_threads(default=1) == 1

    def test_reload_defaults(self, isolated_config, monkeypatch):
        monkeypatch.setattr(config, "THREADS", config.THREADS)
        monkeypatch.setattr(config, "MC_DEFAULT_SAMPLES", config.MC_DEFAULT_SAMPLES)
        config_manager.save_config({"threads": 3, "mc_samples": 50_000})
        assert config.reload_defaults() == (50_000, 3)
        assert config.THREADS == 3


class TestExperimentFiles:
    def test_yaml(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("n: 4\nseeds: [1, 2]\n")
        assert config_manager.load_experiment_file(path) == {"n": 4, "seeds": [1, 2]}

    def test_json(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"n": 4, "delta": 0.2}))
        assert config_manager.load_experiment_file(path) == {"n": 4, "delta": 0.2}

    def test_empty(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text("")
        assert config_manager.load_experiment_file(path) == {}

    @pytest.mark.parametrize("text", ["- n\n- 4\n", "n: [4\n"])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "exp.yaml"
        path.write_text(text)
        with pytest.raises(InvalidInputError):
            config_manager.load_experiment_file(path)


def test_merge_overrides_skips_unset_flags():
    merged = config_manager.merge_overrides({"n": 4, "m": 100}, {"n": 8, "m": None, "k": 1})
    assert merged == {"n": 8, "m": 100, "k": 1}
