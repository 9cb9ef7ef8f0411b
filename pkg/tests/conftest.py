import pytest

from sflab import config_manager
from sflab.dataset import TrainingSet, generate
from sflab.network import init


@pytest.fixture
def small_set() -> TrainingSet:
    return generate(4, 6, 2, "random_labels", seed=3)


@pytest.fixture
def small_net(small_set):
    return init(32, small_set.d, small_set.k, False, seed=11)


@pytest.fixture
def small_bias_net(small_set):
    return init(32, small_set.d, small_set.k, True, seed=12)


@pytest.fixture
def isolated_config(tmp_path, monkeypatch):
    """Point the user defaults file at a temporary directory"""
    monkeypatch.setattr(config_manager, "CONFIG_DIR", tmp_path / "sflab")
    monkeypatch.setattr(config_manager, "CONFIG_FILE", tmp_path / "sflab" / "config.yaml")
    return tmp_path / "sflab" / "config.yaml"

