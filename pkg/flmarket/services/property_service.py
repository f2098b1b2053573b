"""
Property harness for auction mechanisms: individual rationality, truthfulness in the
bid and in the quality report, payment criticality, feasibility and the accounting
identity. Any callable mapping an owner list to an AuctionOutcome can be checked.
"""
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from flmarket.core.config import get_settings
from flmarket.core.constants import MechanismNames, REPORT_COLUMNS
from flmarket.core.exceptions import InvalidInputError, OracleViolationError
from flmarket.core.logging_config import logger
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, MarketConfig
from flmarket.schemas.reports import PropertyReport
from flmarket.schemas.scenario import MarketInstance
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.oracle_service import Mechanism, critical_bid_bisection
from flmarket.services.rma_service import RmaMechanism, group_index

CHECKS = ["ir", "ic_bid", "ic_quality", "criticality", "feasibility", "accounting"]


class CheckResult(NamedTuple):
    trials: int
    failures: int
    worst_violation: float
    cross_group_trials: int = 0


class PayYourBidMechanism:
    """Negative control: another mechanism's allocation, each winner paid its own bid."""

    name = MechanismNames.PAY_YOUR_BID

    def __init__(self, inner: Mechanism):
        self.inner = inner

    def __call__(self, owners: Sequence[DataOwnerType]) -> AuctionOutcome:
        outcome = self.inner(owners)
        payments = {o.owner_id: (o.bid if o.owner_id in outcome.winners else 0.0) for o in owners}
        return outcome.model_copy(update={"payments": payments, "mechanism": self.name})

    def with_seed(self, seed: int) -> "PayYourBidMechanism":
        inner = self.inner.with_seed(seed) if hasattr(self.inner, "with_seed") else self.inner
        return PayYourBidMechanism(inner)


def _true_costs(owners: Sequence[DataOwnerType], cfg: MarketConfig) -> List[float]:
    return [mm.owner_total_cost(o, cfg) for o in owners]


def _utility(outcome: AuctionOutcome, i: int, cost: float) -> float:
    return mm.worker_utility(outcome.payment(i), cost) if i in outcome.winners else 0.0


def _replace(owners: Sequence[DataOwnerType], i: int, **update) -> List[DataOwnerType]:
    changed = list(owners)
    changed[i] = owners[i].model_copy(update=update)
    return changed


def check_ir(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig,
             tolerance: Optional[float] = None) -> CheckResult:
    """Winners are paid at least their bids and at least their true costs; losers are paid nothing."""
    tolerance = get_settings().PROPERTY_TOLERANCE if tolerance is None else tolerance
    outcome = mechanism(owners)
    costs = _true_costs(owners, cfg)
    failures, worst = 0, 0.0
    for owner in owners:
        i = owner.owner_id
        if i in outcome.winners:
            payment = outcome.payment(i)
            violation = max(owner.bid - payment, costs[i] - payment, 0.0)
        else:
            violation = abs(outcome.payment(i))
        worst = max(worst, violation)
        failures += violation > tolerance
    return CheckResult(trials=len(outcome.winners), failures=failures, worst_violation=worst)


def check_ic_bid(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig, trials: int,
                 rng: np.random.Generator, tolerance: Optional[float] = None) -> CheckResult:
    """Random bid misreports, half below and half above the truth, never raise the owner's utility."""
    tolerance = get_settings().PROPERTY_TOLERANCE if tolerance is None else tolerance
    if not owners:
        return CheckResult(0, 0, 0.0)
    truthful = mechanism(owners)
    costs = _true_costs(owners, cfg)
    failures, worst = 0, 0.0
    for trial in range(trials):
        i = int(rng.integers(len(owners)))
        bid = owners[i].bid
        if trial % 2 == 0:
            misreport = bid * rng.uniform(0.0, 1.0)
        else:
            misreport = bid + rng.uniform(0.0, 1.0) * max(bid, 1.0)
        outcome = mechanism(_replace(owners, i, bid=float(misreport)))
        gain = _utility(outcome, i, costs[i]) - _utility(truthful, i, costs[i])
        worst = max(worst, gain)
        failures += gain > tolerance
    return CheckResult(trials=trials, failures=failures, worst_violation=max(worst, 0.0))


def check_ic_quality(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig, trials: int,
                     rng: np.random.Generator, tolerance: Optional[float] = None) -> CheckResult:
    """
    Feasible quality misreports (smaller data size, larger EMD) never raise utility.

    The bid and the true cost stay at their truthful values; only the reported d or
    sigma changes. For RMA, an EMD misreport that lands in another group changes the
    owner's processing slot: such trials are counted in `cross_group_trials` and not
    judged.
    """
    tolerance = get_settings().PROPERTY_TOLERANCE if tolerance is None else tolerance
    if not owners:
        return CheckResult(0, 0, 0.0)
    truthful = mechanism(owners)
    costs = _true_costs(owners, cfg)
    rma_cfg = mechanism.cfg if isinstance(mechanism, RmaMechanism) else None
    failures, worst, cross_group = 0, 0.0, 0
    for trial in range(trials):
        i = int(rng.integers(len(owners)))
        owner = owners[i]
        update: Dict[str, float] = {}
        if trial % 3 != 1:
            update["data_size"] = float(owner.data_size * rng.uniform(0.0, 1.0))
        if trial % 3 != 0:
            update["emd"] = float(owner.emd + rng.uniform(0.0, 1.0) * max(cfg.sigma_max - owner.emd, 0.0))
        if rma_cfg is not None and "emd" in update and \
                group_index(update["emd"], rma_cfg) != group_index(owner.emd, rma_cfg):
            cross_group += 1
            continue
        outcome = mechanism(_replace(owners, i, **update))
        gain = _utility(outcome, i, costs[i]) - _utility(truthful, i, costs[i])
        worst = max(worst, gain)
        failures += gain > tolerance
    return CheckResult(trials=trials - cross_group, failures=failures,
                       worst_violation=max(worst, 0.0), cross_group_trials=cross_group)


def check_payment_criticality(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig,
                              tolerance: float = 1e-5) -> CheckResult:
    """Each winner's payment matches the bisection critical bid within tolerance * (1 + |p|)."""
    outcome = mechanism(owners)
    failures, worst = 0, 0.0
    for i in outcome.sorted_winners():
        payment = outcome.payment(i)
        try:
            reference = critical_bid_bisection(mechanism, owners, i, cfg=cfg)
        except OracleViolationError as e:
            logger.warning(f"Criticality check: {e}")
            failures += 1
            worst = max(worst, float("inf"))
            continue
        if reference is None:
            failures += 1
            worst = max(worst, float("inf"))
            continue
        gap = abs(payment - reference) / (1.0 + abs(payment))
        worst = max(worst, gap)
        failures += gap > tolerance
    return CheckResult(trials=len(outcome.winners), failures=failures, worst_violation=worst)


def check_feasibility(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig) -> CheckResult:
    outcome = mechanism(owners)
    feasible = ConflictGraph.from_owners(owners).is_feasible(outcome.winners)
    return CheckResult(trials=1, failures=0 if feasible else 1, worst_violation=0.0 if feasible else 1.0)


def check_accounting(mechanism: Mechanism, owners: Sequence[DataOwnerType], cfg: MarketConfig,
                     tolerance: Optional[float] = None) -> CheckResult:
    """Platform utility plus worker utilities equals social welfare."""
    tolerance = get_settings().PROPERTY_TOLERANCE if tolerance is None else tolerance
    outcome = mechanism(owners)
    costs = _true_costs(owners, cfg)
    total = mm.platform_utility(outcome, owners, cfg) + sum(
        mm.worker_utility(outcome.payment(i), costs[i]) for i in outcome.winners
    )
    gap = abs(total - mm.social_welfare(outcome.sorted_winners(), owners, cfg))
    gap = max(gap, abs(outcome.social_welfare - mm.social_welfare(outcome.sorted_winners(), owners, cfg)))
    return CheckResult(trials=1, failures=int(gap > tolerance), worst_violation=gap)


def _run_instance(mechanism: Mechanism, instance: MarketInstance, cfg: MarketConfig, checks: Sequence[str],
                  trials: int) -> Dict[str, CheckResult]:
    if hasattr(mechanism, "with_seed"):
        mechanism = mechanism.with_seed(instance.seed)
    rng = np.random.default_rng(np.random.SeedSequence([instance.seed, 7919]))
    owners = instance.owners
    results: Dict[str, CheckResult] = {}
    for check in checks:
        if check == "ir":
            results[check] = check_ir(mechanism, owners, cfg)
        elif check == "ic_bid":
            results[check] = check_ic_bid(mechanism, owners, cfg, trials, rng)
        elif check == "ic_quality":
            results[check] = check_ic_quality(mechanism, owners, cfg, trials, rng)
        elif check == "criticality":
            results[check] = check_payment_criticality(mechanism, owners, cfg)
        elif check == "feasibility":
            results[check] = check_feasibility(mechanism, owners, cfg)
        elif check == "accounting":
            results[check] = check_accounting(mechanism, owners, cfg)
    return results


def run_property_checks(mechanism: Mechanism, instances: Sequence[MarketInstance], cfg: MarketConfig,
                        checks: Optional[Sequence[str]] = None, trials: int = 20,
                        n_jobs: Optional[int] = None, mechanism_name: Optional[str] = None) -> List[PropertyReport]:
    """
    Run property checks over many instances and aggregate one report per check.

    Args:
        mechanism: callable on an owner list; re-seeded per instance when it has `with_seed`
        instances: seeded owner populations
        cfg: market config used for true costs and welfare
        checks: subset of CHECKS, all of them by default
        trials: misreports per instance for the IC checks
        n_jobs: joblib workers, defaults to the N_JOBS setting
        mechanism_name: label for the reports, defaults to the mechanism's `name`

    Returns:
        List[PropertyReport]: one report per check, carrying the seeds of failing instances
    """
    checks = list(checks or CHECKS)
    unknown = sorted(set(checks) - set(CHECKS))
    if unknown:
        raise InvalidInputError(f"unknown checks {unknown}; expected a subset of {CHECKS}")
    name = mechanism_name or getattr(mechanism, "name", type(mechanism).__name__)
    n_jobs = n_jobs or get_settings().N_JOBS

    per_instance = Parallel(n_jobs=n_jobs)(
        delayed(_run_instance)(mechanism, instance, cfg, checks, trials) for instance in instances
    )

    reports = []
    for check in checks:
        results = [r[check] for r in per_instance]
        report = PropertyReport(
            check=check,
            mechanism=name,
            instances=len(instances),
            trials=sum(r.trials for r in results),
            failures=sum(r.failures for r in results),
            worst_violation=max((r.worst_violation for r in results), default=0.0),
            cross_group_trials=sum(r.cross_group_trials for r in results),
            seeds=[inst.seed for inst, r in zip(instances, results) if r.failures > 0],
        )
        level = logger.info if report.passed else logger.warning
        level(f"{name} {check}: {report.failures} failures in {report.trials} trials "
              f"over {report.instances} instances (worst {report.worst_violation:.3g})")
        reports.append(report)
    return reports


def reports_to_frame(reports: Sequence[PropertyReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = report.model_dump()
        row["seeds"] = " ".join(str(s) for s in report.seeds)
        rows.append(row)
    columns = REPORT_COLUMNS + ["cross_group_trials"]
    return pd.DataFrame(rows, columns=columns)

