import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from preclt.core.experiment_config import config_from_dict
from preclt.services.randgen import SeedSpec, make_distribution, sample_data_matrix


@pytest.fixture
def gaussian():
    """Standard normal entry law"""
    return make_distribution("gaussian")


@pytest.fixture
def small_matrix(gaussian):
    """A seeded 6 x 20 Gaussian data matrix"""
    return sample_data_matrix(gaussian, 6, 20, SeedSpec(7, 0))


@pytest.fixture
def medium_matrix():
    """A seeded 25 x 80 uniform data matrix"""
    return sample_data_matrix(make_distribution("uniform"), 25, 80, SeedSpec(11, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_config(tmp_path):
    """Factory for validated experiment configs writing into tmp_path"""
    def _make(**overrides):
        raw = {
            "mode": "single_entry",
            "distribution": "gaussian",
            "p": 10,
            "n": 40,
            "replicates": 40,
            "master_seed": 2024,
            "output_dir": str(tmp_path / "results"),
        }
        raw.update(overrides)
        return config_from_dict(raw)
    return _make


@pytest.fixture
def config_file(tmp_path):
    """Write a JSON config and return its path"""
    def _write(text, name="experiment.json"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
