import numpy as np
import pytest

from flmarket.core.exceptions import InvalidInputError
from flmarket.core.constants import REPORT_COLUMNS
from flmarket.schemas.market import AuctionOutcome
from flmarket.schemas.scenario import MarketInstance, ScenarioConfig
from flmarket.services import market_model as mm
from flmarket.services.drla_service import DrlaMechanism
from flmarket.services.experiment_service import BenchmarkMechanism, generate_instances
from flmarket.services.property_service import (
    CHECKS,
    PayYourBidMechanism,
    check_ic_bid,
    check_ir,
    run_property_checks,
    reports_to_frame,
)
from flmarket.services.rma_service import RmaMechanism


@pytest.fixture
def lone_truthful_owner(cfg):
    return [mm.truthful_owner(0, 10.0, 0.6, range(1, 7), 1e6, 0.1, 0.0, 0.0, cfg)]


def test_rma_passes_every_check(cfg, small_instances):
    reports = run_property_checks(RmaMechanism(cfg, seed=0), small_instances, cfg, trials=10, n_jobs=1)
    assert [r.check for r in reports] == CHECKS
    for report in reports:
        assert report.passed, report
        assert report.instances == len(small_instances)
    assert sum(r.trials for r in reports if r.check == "criticality") > 0


def test_drla_passes_every_check(cfg, small_instances, linear_quality_params):
    mechanism = DrlaMechanism(cfg, linear_quality_params)
    reports = run_property_checks(mechanism, small_instances, cfg, trials=10, n_jobs=1)
    for report in reports:
        assert report.passed, report
        assert report.cross_group_trials == 0


def test_pay_your_bid_fails_truthfulness(cfg, lone_truthful_owner):
    assert lone_truthful_owner[0].bid == pytest.approx(1.0)
    mechanism = PayYourBidMechanism(RmaMechanism(cfg, seed=0))
    outcome = mechanism(lone_truthful_owner)
    assert outcome.winners == {0}
    assert outcome.payment(0) == lone_truthful_owner[0].bid
    result = check_ic_bid(mechanism, lone_truthful_owner, cfg, trials=4, rng=np.random.default_rng(0))
    assert result.failures >= 1
    assert result.worst_violation > 0


def test_pay_your_bid_report_names_the_seed(cfg, lone_truthful_owner):
    instances = [MarketInstance(seed=41, owners=lone_truthful_owner)]
    reports = run_property_checks(PayYourBidMechanism(RmaMechanism(cfg, seed=0)), instances, cfg,
                                  checks=["ir", "ic_bid"], trials=4, n_jobs=1)
    by_check = {r.check: r for r in reports}
    assert by_check["ir"].passed
    assert not by_check["ic_bid"].passed
    assert by_check["ic_bid"].seeds == [41]
    assert by_check["ic_bid"].mechanism == "pay_your_bid"


def test_ir_violation_is_flagged(cfg, lone_truthful_owner):
    def underpays(owners):
        return AuctionOutcome(winners=frozenset({0}), payments={0: 0.0})

    result = check_ir(underpays, lone_truthful_owner, cfg)
    assert result.failures == 1
    assert result.worst_violation == pytest.approx(1.0)


def test_empty_outcome_passes_vacuously(cfg, lone_truthful_owner):
    def nobody_wins(owners):
        return AuctionOutcome()

    assert check_ir(nobody_wins, lone_truthful_owner, cfg).trials == 0
    result = check_ic_bid(nobody_wins, lone_truthful_owner, cfg, trials=6, rng=np.random.default_rng(0))
    assert result.failures == 0


def test_unknown_check_is_rejected(cfg, small_instances):
    with pytest.raises(InvalidInputError):
        run_property_checks(RmaMechanism(cfg, seed=0), small_instances, cfg, checks=["speed"])


def test_reports_to_frame(cfg, small_instances):
    reports = run_property_checks(RmaMechanism(cfg, seed=0), small_instances[:2], cfg,
                                  checks=["ir", "feasibility"], n_jobs=1)
    frame = reports_to_frame(reports)
    assert list(frame.columns) == REPORT_COLUMNS + ["cross_group_trials"]
    assert frame["check"].tolist() == ["ir", "feasibility"]
    assert (frame["failures"] == 0).all()


def assert_no_failures(reports):
    for report in reports:
        assert report.failures == 0, report


@pytest.mark.slow
def test_rma_truthful_on_many_instances(cfg):
    instances = generate_instances(ScenarioConfig(n_owners=10), cfg, count=500, seed=31)
    reports = run_property_checks(RmaMechanism(cfg, seed=0), instances, cfg, checks=["ic_bid", "ic_quality"],
                                  trials=20, n_jobs=-1)
    assert_no_failures(reports)
    assert reports[0].trials == 500 * 20


@pytest.mark.slow
def test_trained_drla_truthful_on_many_instances(cfg, trained_drla):
    instances = generate_instances(ScenarioConfig(n_owners=10), cfg, count=200, seed=32)
    mechanism = DrlaMechanism(cfg, trained_drla["params"])
    reports = run_property_checks(mechanism, instances, cfg, checks=["ic_bid", "ic_quality"], trials=20, n_jobs=-1)
    assert_no_failures(reports)


@pytest.mark.slow
def test_individual_rationality_at_fifty_owners(cfg, trained_drla):
    instances = generate_instances(ScenarioConfig(n_owners=50), cfg, count=1000, seed=33)
    for mechanism in (RmaMechanism(cfg, seed=0), DrlaMechanism(cfg, trained_drla["params"]),
                      BenchmarkMechanism(cfg)):
        reports = run_property_checks(mechanism, instances, cfg, checks=["ir"], n_jobs=-1)
        assert_no_failures(reports)
        assert reports[0].trials > 0


@pytest.mark.slow
def test_payments_are_critical_on_many_instances(cfg, trained_drla):
    instances = generate_instances(ScenarioConfig(n_owners=20), cfg, count=200, seed=34)
    for mechanism in (RmaMechanism(cfg, seed=0), DrlaMechanism(cfg, trained_drla["params"])):
        reports = run_property_checks(mechanism, instances, cfg, checks=["criticality"], n_jobs=-1)
        assert_no_failures(reports)
        assert reports[0].trials > 0
