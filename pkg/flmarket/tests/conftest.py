from typing import Iterable

import hypothesis
import numpy as np
import pytest
from decouple import config

from flmarket.schemas.market import DataOwnerType, MarketConfig
from flmarket.schemas.scenario import ScenarioConfig
from flmarket.schemas.training import DrlaHyperParams, TrainConfig
from flmarket.services.drl_training_service import TrainingResult, train
from flmarket.services.drla_service import DrlaParams
from flmarket.services.experiment_service import generate_instances

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(config("HYPOTHESIS_PROFILE", default="fast"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def build_owner(owner_id: int, bid: float = 1.0, data_size: float = 10.0, emd: float = 0.6,
                channels: Iterable[int] = (1,), channel_gain: float = 1e6, unit_data_cost: float = 0.0,
                unit_compute_cost: float = 0.0, unit_transmit_cost: float = 0.0) -> DataOwnerType:
    return DataOwnerType(
        owner_id=owner_id,
        bid=bid,
        data_size=data_size,
        emd=emd,
        channels=frozenset(channels),
        channel_gain=channel_gain,
        unit_data_cost=unit_data_cost,
        unit_compute_cost=unit_compute_cost,
        unit_transmit_cost=unit_transmit_cost,
    )


@pytest.fixture
def make_owner():
    return build_owner


@pytest.fixture
def cfg() -> MarketConfig:
    return MarketConfig()


@pytest.fixture
def free_cfg() -> MarketConfig:
    """Platform costs switched off, so welfare is data utility minus owner costs."""
    return MarketConfig(platform_compute_cost=0.0, platform_transmit_cost=0.0)


@pytest.fixture
def three_owners(make_owner):
    """Three owners requesting {1,4,6}, {2,5,6} and {3,7}: only owners 0 and 1 conflict."""
    return [
        make_owner(0, bid=1.0, data_size=8.0, emd=0.2, channels={1, 4, 6}),
        make_owner(1, bid=1.5, data_size=6.0, emd=0.4, channels={2, 5, 6}),
        make_owner(2, bid=0.5, data_size=4.0, emd=0.9, channels={3, 7}),
    ]


@pytest.fixture(scope="session")
def small_instances():
    cfg = MarketConfig()
    return generate_instances(ScenarioConfig(n_owners=6), cfg, count=6, seed=2024)


@pytest.fixture
def small_hyper() -> DrlaHyperParams:
    return DrlaHyperParams(embedding_dim=4, gcn_layers=2, monotone_groups=2, monotone_units=2)


@pytest.fixture
def linear_quality_params() -> DrlaParams:
    """Q = small nonlinear term - b + max(0, d - sigma): g reduces to one unit with unit weights."""
    hyper = DrlaHyperParams(embedding_dim=4, gcn_layers=2, monotone_groups=1, monotone_units=1)
    params = DrlaParams.initialize(hyper, seed=5)
    for name in ("mono.w1", "mono.b1", "mono.w2", "mono.b2", "q.phi3", "q.phi4"):
        params.arrays[name] = np.zeros_like(params.arrays[name])
    return params


@pytest.fixture
def bid_only_params(small_hyper) -> DrlaParams:
    """Scores reduce to -b up to a negligible quality term."""
    params = DrlaParams.initialize(small_hyper, seed=0)
    params.arrays["q.phi2"] = np.zeros_like(params.arrays["q.phi2"])
    params.arrays["q.phi3"] = np.zeros((1, 1))
    params.arrays["q.phi4"] = np.full((1, 1), -60.0)
    return params


@pytest.fixture(scope="session")
def trained_drla() -> TrainingResult:
    """DRLA trained on ten-owner populations, validated every episode. Slow tests only."""
    cfg = MarketConfig()
    scenario = ScenarioConfig(n_owners=10)
    training_set = [inst.owners for inst in generate_instances(scenario, cfg, count=200, seed=101)]
    validation = [inst.owners for inst in generate_instances(scenario, cfg, count=20, seed=202)]
    hyper = DrlaHyperParams(embedding_dim=16, monotone_groups=4, monotone_units=4)
    return train(training_set, cfg, TrainConfig(episodes=300, validate_every=1, seed=1),
                 hyper=hyper, validation=validation)
