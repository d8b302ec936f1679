import json

import numpy as np
import pytest

from system_model import (
    BINARY_SUPPORT,
    MIXED_SUPPORT,
    ChannelModel,
    ObservationModel,
    Scenario,
    TargetPrior,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def binary_scenario():
    prior = TargetPrior.uniform(BINARY_SUPPORT)
    return Scenario(prior, ObservationModel.bernoulli(BINARY_SUPPORT), ChannelModel.unit_gain(1.0), K=4, N=2)


@pytest.fixture
def mixed_scenario():
    prior = TargetPrior.uniform(MIXED_SUPPORT)
    obs = ObservationModel.even_uniform_odd_binomial(MIXED_SUPPORT, 20)
    return Scenario(prior, obs, ChannelModel.unit_gain(1.0), K=8, N=5)


def small_scenario(channel=None, K=2, N=2, seed=0):
    """Three target values, three observation values, random p(w|s)."""
    g = np.random.default_rng(seed)
    support = (0.25, 0.5, 0.75)
    table = g.dirichlet(np.ones(3), size=3)
    table = table / table.sum(axis=1, keepdims=True)
    channel = channel or ChannelModel.rician(0.5, scatter_var=0.7, mean=1.0)
    return Scenario(TargetPrior.uniform(support), ObservationModel.tabular(support, table), channel, K=K, N=N)


def tiny_config_dict(output_dir, protocols=None):
    return {
        "schema_version": 1,
        "name": "tiny",
        "scenario": {
            "support": [0.2, 0.4, 0.6, 0.8],
            "prior": "uniform",
            "observation": {"kind": "even_uniform_odd_binomial", "M": 6},
            "N": 2,
            "energy": 1.0,
        },
        "train": {"epochs": 1, "batches_per_epoch": 2, "batch_size": 16, "lr": 0.001, "lr_decay": 0.1, "decay_every": 10},
        "protocols": protocols or [{"kind": "IB_TBMA"}, {"kind": "GAUSS_ANN"}],
        "sweep": {"K": [2], "snr_db": [0.0], "channels": ["unit_gain"], "seeds": [0]},
        "evaluation": {"n": 1000, "validation_n": 1000},
        "workers": 1,
        "output_dir": str(output_dir),
    }


def write_config(path, raw):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f)
    return str(path)
