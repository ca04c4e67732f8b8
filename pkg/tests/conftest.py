import json
from pathlib import Path

import numpy as np
import pytest

from isacdesign.config import load_config

REPO = Path(__file__).resolve().parent.parent

# Small enough for a full AO run in a few seconds
TINY_CONFIG = {
    "num_antennas": 2,
    "num_samples": 4,
    "cp_length": 1,
    "angle_step": 5.0,
    "mainlobe": [[-10.0, 10.0]],
    "num_symbols": 2,
    "ao_max_iter": 4,
    "sca_max_iter": 6,
    "adpm_max_iter": 200,
    "dominance_samples": 100,
    "restoration_sweeps": 200,
}


@pytest.fixture
def tiny_config():
    return dict(TINY_CONFIG)


@pytest.fixture
def tiny(tiny_config):
    """(Scenario, SolverConfig)"""
    return load_config(None, tiny_config)


@pytest.fixture
def tiny_scenario(tiny):
    return tiny[0]


@pytest.fixture
def tiny_config_file(tmp_path, tiny_config):
    path = tmp_path.joinpath("tiny.json")
    path.write_text(json.dumps(tiny_config))
    return path


@pytest.fixture
def desk_config_path():
    return REPO.joinpath("configs", "desk.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
