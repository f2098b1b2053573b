import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flmarket.core.exceptions import InvalidInputError
from flmarket.schemas.market import AuctionOutcome, LabelDistribution, MarketConfig
from flmarket.services import market_model as mm


def test_emd_examples():
    uniform = mm.uniform_distribution(10)
    point_mass = [1.0] + [0.0] * 9
    half = [0.2] * 5 + [0.0] * 5
    assert mm.emd(uniform, uniform) == pytest.approx(0.0, abs=1e-12)
    assert mm.emd(point_mass, uniform) == pytest.approx(1.8)
    assert mm.emd(half, uniform) == pytest.approx(1.0)


def test_emd_rejects_length_mismatch():
    with pytest.raises(InvalidInputError):
        mm.emd([0.5, 0.5], mm.uniform_distribution(3))


def test_label_distribution_validates_sum():
    with pytest.raises(ValueError):
        LabelDistribution(probs=(0.5, 0.6))


def test_distribution_from_counts():
    dist = mm.label_distribution_from_counts([3, 1, 0, 0])
    assert dist.probs[0] == pytest.approx(0.75)
    assert sum(dist.probs) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidInputError):
        mm.label_distribution_from_counts([0, 0])


def test_quality_alpha_values(cfg):
    assert mm.quality_alpha(0.0, cfg) == pytest.approx(0.96208, abs=1e-4)
    assert mm.quality_alpha(1.2, cfg) == pytest.approx(0.46882, abs=1e-4)
    assert mm.quality_alpha(20.0, cfg) < 1e-6


def test_data_quality_values(cfg):
    assert mm.data_quality(0.0, 0.0, cfg) == pytest.approx(0.6011, abs=1e-4)
    assert mm.data_quality(100.0, 0.0, cfg) == pytest.approx(0.73748, abs=1e-3)
    # saturates at alpha for very large data
    assert mm.data_quality(1e9, 0.3, cfg) == pytest.approx(mm.quality_alpha(0.3, cfg), rel=1e-9)
    with pytest.raises(InvalidInputError):
        mm.data_quality(-1.0, 0.0, cfg)


@given(
    data=st.floats(min_value=0.0, max_value=50.0),
    data_step=st.floats(min_value=0.5, max_value=50.0),
    delta=st.floats(min_value=0.0, max_value=1.1),
    delta_step=st.floats(min_value=0.01, max_value=0.1),
)
def test_data_quality_monotone(data, data_step, delta, delta_step):
    cfg = MarketConfig()
    assert mm.data_quality(data + data_step, delta, cfg) > mm.data_quality(data, delta, cfg)
    assert mm.data_quality(data, delta + delta_step, cfg) < mm.data_quality(data, delta, cfg)


@pytest.mark.parametrize("delta", [0.0, 0.6, 1.2])
def test_shortfall_convex_decreasing(cfg, delta):
    alpha = mm.quality_alpha(delta, cfg)
    z = np.arange(0.0, 100.0, 0.5)
    values = np.array([mm.shortfall(v, alpha, cfg) for v in z])
    assert np.all(np.diff(values) < 0)
    assert np.all(np.diff(values, n=2) >= -1e-12)


def test_shortfall_examples(cfg):
    alpha = mm.quality_alpha(0.6, cfg)
    assert mm.shortfall(0.0, alpha, cfg) == pytest.approx(36.1)
    assert mm.shortfall(10.0, alpha, cfg) == pytest.approx(31.5815, abs=1e-2)


def test_data_utility(cfg, make_owner):
    owners = [make_owner(0, data_size=10.0, emd=0.6), make_owner(1, data_size=10.0, emd=0.6)]
    assert mm.data_utility([], owners, cfg) == 0.0
    assert mm.data_utility([0], owners, cfg) == pytest.approx(44.03, abs=1e-2)
    assert mm.data_utility([0, 1], owners, cfg) == pytest.approx(100.0 * mm.data_quality(20.0, 0.6, cfg))


def test_owner_costs(cfg, make_owner):
    assert mm.owner_data_cost(10.0, 1e-4) == pytest.approx(1e-3)
    assert mm.owner_compute_cost(10.0, cfg, 1e-4) == pytest.approx(0.025)
    assert mm.comm_power(4, 1e6, cfg) == pytest.approx(33554431 * 4e4 / 1e6, rel=1e-9)
    assert mm.owner_comm_cost(4, 1e6, cfg, 0.05) == pytest.approx(0.33554, abs=1e-4)

    owner = make_owner(0, data_size=10.0, channels={1, 2, 3, 4}, unit_data_cost=1e-4,
                       unit_compute_cost=1e-4, unit_transmit_cost=0.05)
    breakdown = mm.owner_cost_breakdown(owner, cfg)
    assert breakdown["total"] == pytest.approx(breakdown["data"] + breakdown["compute"] + breakdown["comm"])
    assert breakdown["total"] == pytest.approx(0.3615, abs=1e-3)


def test_comm_power_shape(cfg):
    powers = [mm.comm_power(c, 1e6, cfg) for c in range(1, 7)]
    assert all(a > b for a, b in zip(powers, powers[1:]))
    assert mm.comm_power(4, 2e6, cfg) == pytest.approx(mm.comm_power(4, 1e6, cfg) / 2)
    with pytest.raises(InvalidInputError):
        mm.comm_power(0, 1e6, cfg)


def test_truthful_owner_bids_its_cost(cfg):
    owner = mm.truthful_owner(3, 5.0, 0.4, {1, 2, 3, 4, 5}, 2e6, 5e-5, 5e-5, 0.05, cfg)
    assert owner.bid == pytest.approx(mm.owner_total_cost(owner, cfg))
    assert owner.owner_id == 3


def test_platform_cost(make_owner):
    cfg = MarketConfig(platform_transmit_cost=0.0)
    owners = [make_owner(i, channels={i + 1}) for i in range(3)]
    assert mm.platform_cost([], owners, cfg) == 0.0
    assert mm.platform_cost([0], owners, cfg) == 0.0
    assert mm.platform_cost([0, 1, 2], owners, cfg) == pytest.approx(0.5)
    assert mm.platform_marginal_cost(owners[2], 2, cfg) == pytest.approx(0.25)
    assert mm.platform_marginal_cost(owners[0], 0, cfg) == 0.0


def test_social_welfare(free_cfg, make_owner):
    owners = [make_owner(0, data_size=10.0, emd=0.6, unit_data_cost=0.1)]
    assert mm.social_welfare([], owners, free_cfg) == 0.0
    assert mm.social_welfare([0], owners, free_cfg) == pytest.approx(43.03, abs=1e-2)


def test_utilities_add_up_to_welfare(free_cfg, three_owners):
    outcome = AuctionOutcome(winners=frozenset({0, 2}), payments={0: 3.0, 1: 0.0, 2: 7.5})
    costs = {i: mm.owner_total_cost(three_owners[i], free_cfg) for i in outcome.winners}
    total = mm.platform_utility(outcome, three_owners, free_cfg) + sum(
        mm.worker_utility(outcome.payment(i), costs[i]) for i in outcome.winners
    )
    assert total == pytest.approx(mm.social_welfare([0, 2], three_owners, free_cfg), abs=1e-9)


def test_check_instance_requires_positional_ids(make_owner):
    mm.check_instance([make_owner(0), make_owner(1)])
    with pytest.raises(InvalidInputError):
        mm.check_instance([make_owner(1), make_owner(0)])


def test_transmit_time(cfg):
    assert mm.transmit_time(cfg) == pytest.approx(cfg.model_size / cfg.rate * cfg.global_epochs)
    assert math.isfinite(mm.platform_compute_increment(cfg))
