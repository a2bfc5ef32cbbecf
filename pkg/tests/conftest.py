import numpy as np
import pytest

from jumpflux.config import build_config, default_config, default_config_dict


@pytest.fixture(scope="session")
def shipped_config():
    return default_config()


@pytest.fixture(scope="session")
def shipped_model(shipped_config):
    return shipped_config.model()


@pytest.fixture(scope="session")
def scalar_config():
    # smallest valid configuration: one-dimensional plant with unit feedback
    return build_config(
        {
            "system": {"A": [[0.0]], "B": [[1.0]], "K": [[1.0]], "y0": [1.0]},
            "diffusion": {"kind": "constant", "base": [[0.3]]},
            "jump": {"kind": "linear-in-mark", "base": [[1.0]]},
            "levy": {"kind": "atomic", "atoms": [{"location": [0.5], "mass": 2.0}]},
            "horizon": 1.0,
            "regime": {"regime": "R2", "c": 1.0, "epsilons": [0.2, 0.1, 0.05]},
            "paths_per_point": 4,
            "master_seed": 11,
            "internal_step": "auto",
            "output_dir": "results",
        }
    )


def config_dict_with(**updates):
    raw = default_config_dict()
    raw.update(updates)
    return raw


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
