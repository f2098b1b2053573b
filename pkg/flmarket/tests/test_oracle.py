from itertools import combinations

import numpy as np
import pytest

from flmarket.core.exceptions import InvalidInputError, OracleCapacityError, OracleViolationError
from flmarket.schemas.market import AuctionOutcome
from flmarket.schemas.scenario import ScenarioConfig
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.experiment_service import benchmark_winners, evaluate_mechanisms, generate_instances
from flmarket.services.oracle_service import (
    approx_ratio,
    critical_bid_bisection,
    feasible_subsets,
    optimal_welfare,
    wins_with_bid,
)
from flmarket.services.rma_service import RmaMechanism, rma_winners


def threshold_mechanism(*winning_ranges):
    """Owner 0 wins exactly when its bid falls in one of the closed ranges."""
    def mechanism(owners):
        bid = owners[0].bid
        won = any(low <= bid <= high for low, high in winning_ranges)
        return AuctionOutcome(winners=frozenset({0}) if won else frozenset())
    return mechanism


def brute_force_best(owners, cfg):
    graph = ConflictGraph.from_owners(owners)
    best = 0.0
    for size in range(1, len(owners) + 1):
        for subset in combinations(range(len(owners)), size):
            if graph.is_feasible(subset):
                best = max(best, mm.social_welfare(subset, owners, cfg))
    return best


def test_feasible_subsets_of_three_owner_graph():
    graph = ConflictGraph.build([{1, 4, 6}, {2, 5, 6}, {3, 7}])
    subsets = sorted(sorted(s) for s in feasible_subsets(graph))
    assert subsets == [[], [0], [0, 2], [1], [1, 2], [2]]


def test_oracle_on_three_owners(free_cfg, three_owners):
    result = optimal_welfare(three_owners, free_cfg)
    assert result.evaluated_count == 6
    assert result.best_welfare == pytest.approx(brute_force_best(three_owners, free_cfg))
    assert result.best_welfare == pytest.approx(mm.social_welfare(result.best_set, three_owners, free_cfg))


def test_oracle_trivial_instances(free_cfg, make_owner):
    empty = optimal_welfare([], free_cfg)
    assert empty.best_set == [] and empty.best_welfare == 0.0
    single = optimal_welfare([make_owner(0, bid=1.0, unit_data_cost=0.1)], free_cfg)
    assert single.best_set == [0]
    assert single.best_welfare == pytest.approx(43.03, abs=1e-2)


def test_oracle_capacity(cfg, make_owner):
    owners = [make_owner(i, channels={i + 1}) for i in range(21)]
    with pytest.raises(OracleCapacityError):
        optimal_welfare(owners, cfg)


def test_oracle_dominates_mechanisms(cfg, small_instances):
    for instance in small_instances:
        owners = instance.owners
        best = optimal_welfare(owners, cfg)
        assert best.best_welfare == pytest.approx(brute_force_best(owners, cfg), abs=1e-9)
        rma = mm.social_welfare(sorted(rma_winners(owners, cfg, instance.seed)), owners, cfg)
        benchmark = mm.social_welfare(sorted(benchmark_winners(owners, cfg)), owners, cfg)
        assert rma <= best.best_welfare + 1e-9
        assert benchmark <= best.best_welfare + 1e-9


def test_approx_ratio():
    assert approx_ratio(5.0, 5.0) == 1.0
    assert approx_ratio(0.0, 5.0) == 0.0
    assert approx_ratio(4.3, 5.0) == pytest.approx(0.86)
    with pytest.raises(InvalidInputError):
        approx_ratio(1.0, 0.0)


def test_bisection_finds_threshold(make_owner):
    owners = [make_owner(0, bid=1.0)]
    mechanism = threshold_mechanism((0.0, 5.0))
    assert wins_with_bid(mechanism, owners, 0, 4.0)
    assert critical_bid_bisection(mechanism, owners, 0, upper=10.0) == pytest.approx(5.0, abs=1e-6)


def test_bisection_for_a_loser(make_owner):
    owners = [make_owner(0, bid=1.0)]
    assert critical_bid_bisection(threshold_mechanism(), owners, 0, upper=10.0) is None


def test_bisection_rejects_non_monotone_mechanisms(make_owner):
    owners = [make_owner(0, bid=1.0)]
    with pytest.raises(OracleViolationError):
        critical_bid_bisection(threshold_mechanism((0.0, 2.0), (8.0, 20.0)), owners, 0, upper=10.0)
    with pytest.raises(OracleViolationError):
        critical_bid_bisection(threshold_mechanism((0.0, 2.0), (5.0, 6.0)), owners, 0, upper=10.0)


def test_bisection_needs_a_bound(make_owner):
    with pytest.raises(InvalidInputError):
        critical_bid_bisection(threshold_mechanism((0.0, 5.0)), [make_owner(0, bid=1.0)], 0)


def test_bisection_agrees_with_rma_for_a_lone_owner(free_cfg, make_owner):
    owners = [make_owner(0, bid=1.0)]
    mechanism = RmaMechanism(free_cfg, seed=0)
    outcome = mechanism(owners)
    assert critical_bid_bisection(mechanism, owners, 0) == pytest.approx(outcome.payment(0), abs=1e-6)


@pytest.mark.slow
def test_oracle_dominance_and_trained_drla_quality(cfg, trained_drla):
    instances = generate_instances(ScenarioConfig(n_owners=12), cfg, count=200, seed=35)
    frame = evaluate_mechanisms(instances, ["rma", "drla", "benchmark"], cfg,
                                drla_params=trained_drla["params"], n_jobs=-1)
    welfare = frame.pivot(index="seed", columns="mechanism", values="welfare")
    for mechanism in ("rma", "drla", "benchmark"):
        assert (welfare[mechanism] <= welfare["oracle"] + 1e-9).all(), mechanism
    ratios = frame.dropna(subset=["ratio"]).groupby("mechanism")["ratio"].median()
    assert 0.0 <= ratios["rma"] <= 1.0
    assert 0.0 <= ratios["drla"] <= 1.0

    means = welfare.mean()
    assert means["drla"] >= means["benchmark"]
    assert means["drla"] >= means["rma"] - 0.05 * np.abs(means["rma"])
