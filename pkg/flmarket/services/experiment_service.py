"""
Scenario generation, the bid-only greedy benchmark, and the sweep / comparison runners
behind the command line.
"""
import time
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from flmarket.core.config import get_settings
from flmarket.core.constants import SWEEP_COLUMNS, MechanismNames, PaymentBranch
from flmarket.core.exceptions import ConfigurationError, InvalidInputError
from flmarket.core.logging_config import logger
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, MarketConfig
from flmarket.schemas.scenario import MarketInstance, ScenarioConfig, SweepSpec
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.drla_service import DrlaMechanism, DrlaParams
from flmarket.services.oracle_service import (
    Mechanism, approx_ratio, critical_bid_bisection, optimal_welfare, standalone_bid_bound,
)
from flmarket.services.rma_service import RmaMechanism, run_rma


def _channel_count(scenario: ScenarioConfig, rng: np.random.Generator) -> int:
    low, high = scenario.channel_count_range
    if scenario.mean_channels is None or high == low:
        return int(rng.integers(low, high + 1))
    return low + int(rng.binomial(high - low, (scenario.mean_channels - low) / (high - low)))


def draw_owners(scenario: ScenarioConfig, cfg: MarketConfig, seed: int) -> List[DataOwnerType]:
    """One truthful owner population, fully determined by `seed`."""
    rng = np.random.default_rng(seed)
    owners = []
    for owner_id in range(scenario.n_owners):
        count = _channel_count(scenario, rng)
        channels = (rng.choice(scenario.channel_pool, size=count, replace=False) + 1).tolist()
        owners.append(mm.truthful_owner(
            owner_id=owner_id,
            data_size=float(rng.uniform(*scenario.data_range)),
            emd_value=float(rng.uniform(*scenario.emd_range)),
            channels=channels,
            channel_gain=float(rng.uniform(*scenario.gain_range)),
            unit_data_cost=float(rng.uniform(*scenario.data_cost_range)),
            unit_compute_cost=float(rng.uniform(*scenario.compute_cost_range)),
            unit_transmit_cost=float(rng.uniform(*scenario.transmit_cost_range)),
            cfg=cfg,
        ))
    return owners


def instance_seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)] if count else []


def generate_instances(scenario: ScenarioConfig, cfg: MarketConfig, count: int, seed: int) -> List[MarketInstance]:
    if count < 0:
        raise InvalidInputError(f"instance count must be nonnegative, got {count}")
    if scenario.emd_range[1] > cfg.sigma_max or scenario.data_range[1] > cfg.d_max:
        raise ConfigurationError(
            f"scenario ranges (d up to {scenario.data_range[1]}, sigma up to {scenario.emd_range[1]}) "
            f"exceed the market limits (d_max={cfg.d_max}, sigma_max={cfg.sigma_max})"
        )
    return [MarketInstance(seed=s, owners=draw_owners(scenario, cfg, s)) for s in instance_seeds(seed, count)]


def benchmark_winners(owners: Sequence[DataOwnerType], cfg: MarketConfig,
                      graph: Optional[ConflictGraph] = None) -> List[int]:
    """Ascending bid order, conflicts skipped, stop at the first owner that lowers the bid-based welfare."""
    if not owners:
        return []
    graph = graph or ConflictGraph.from_owners(owners)
    chosen: List[int] = []
    blocked = set()
    current = 0.0
    for k in sorted(range(len(owners)), key=lambda k: (owners[k].bid, k)):
        if k in blocked:
            continue
        trial = chosen + [k]
        welfare = (mm.data_utility(trial, owners, cfg) - mm.platform_cost(trial, owners, cfg)
                   - sum(owners[j].bid for j in trial))
        if welfare < current:
            break
        chosen.append(k)
        blocked |= graph.neighbors(k)
        current = welfare
    return chosen


class BenchmarkMechanism:
    """Bid-only greedy allocation with bisection critical payments."""

    name = MechanismNames.BENCHMARK

    def __init__(self, cfg: MarketConfig):
        self.cfg = cfg

    def __call__(self, owners: Sequence[DataOwnerType]) -> AuctionOutcome:
        return benchmark_bid_greedy(owners, self.cfg)

    def allocate(self, owners: Sequence[DataOwnerType]) -> FrozenSet[int]:
        return frozenset(benchmark_winners(owners, self.cfg))

    def upper_bid_bound(self, owners: Sequence[DataOwnerType], i: int) -> float:
        return standalone_bid_bound(owners[i], self.cfg)


def benchmark_bid_greedy(owners: Sequence[DataOwnerType], cfg: MarketConfig) -> AuctionOutcome:
    mm.check_instance(owners)
    winners = benchmark_winners(owners, cfg)
    mechanism = BenchmarkMechanism(cfg)
    payments = {o.owner_id: 0.0 for o in owners}
    for i in winners:
        # the bid-greedy win region need not be an interval; take the boundary above the own bid
        payments[i] = critical_bid_bisection(mechanism, owners, i, scan_points=0)
    return AuctionOutcome(
        winners=frozenset(winners),
        payments=payments,
        social_welfare=mm.social_welfare(winners, owners, cfg),
        mechanism=MechanismNames.BENCHMARK,
        payment_branch={i: PaymentBranch.BISECTION for i in winners},
    )


class OracleMechanism:
    """Welfare-optimal allocation by exhaustive search; no payments."""

    name = MechanismNames.ORACLE

    def __init__(self, cfg: MarketConfig):
        self.cfg = cfg

    def __call__(self, owners: Sequence[DataOwnerType]) -> AuctionOutcome:
        result = optimal_welfare(owners, self.cfg)
        return AuctionOutcome(
            winners=frozenset(result.best_set),
            payments={o.owner_id: 0.0 for o in owners},
            social_welfare=result.best_welfare,
            mechanism=self.name,
        )

    def allocate(self, owners: Sequence[DataOwnerType]) -> FrozenSet[int]:
        return frozenset(optimal_welfare(owners, self.cfg).best_set)


def build_mechanism(name: str, cfg: MarketConfig, seed: int = 0,
                    drla_params: Optional[DrlaParams] = None) -> Mechanism:
    if name == MechanismNames.RMA:
        return RmaMechanism(cfg, seed)
    if name == MechanismNames.DRLA:
        if drla_params is None:
            raise ConfigurationError("the drla mechanism needs trained parameters (--params)")
        return DrlaMechanism(cfg, drla_params)
    if name == MechanismNames.BENCHMARK:
        return BenchmarkMechanism(cfg)
    if name == MechanismNames.ORACLE:
        return OracleMechanism(cfg)
    raise ConfigurationError(f"unknown mechanism {name!r}; expected one of {MechanismNames.ALL}")


def allocation(mechanism: Mechanism, owners: Sequence[DataOwnerType]) -> FrozenSet[int]:
    allocate = getattr(mechanism, "allocate", None)
    return allocate(owners) if allocate is not None else mechanism(owners).winners


def _evaluate_instance(instance: MarketInstance, names: Sequence[str], cfg: MarketConfig,
                       drla_params: Optional[DrlaParams]) -> List[Dict[str, float]]:
    rows = []
    for name in names:
        mechanism = build_mechanism(name, cfg, seed=instance.seed, drla_params=drla_params)
        winners = sorted(allocation(mechanism, instance.owners))
        rows.append({
            "seed": instance.seed,
            "mechanism": name,
            "welfare": mm.social_welfare(winners, instance.owners, cfg),
            "workers": len(winners),
        })
    return rows


def apply_sweep_value(kind: str, value: float, scenario: ScenarioConfig,
                      cfg: MarketConfig) -> Tuple[ScenarioConfig, MarketConfig]:
    if kind == "N":
        n = int(value)
        return scenario.model_copy(update={"n_owners": n}), cfg.model_copy(update={"n_owners": n})
    if kind == "d_max":
        return (scenario.model_copy(update={"data_range": (scenario.data_range[0], float(value))}),
                MarketConfig(**{**cfg.model_dump(), "d_max": float(value)}))
    if kind == "sigma_max":
        return (scenario.model_copy(update={"emd_range": (scenario.emd_range[0], float(value))}),
                MarketConfig(**{**cfg.model_dump(), "sigma_max": float(value)}))
    if kind == "G":
        return scenario, MarketConfig(**{**cfg.model_dump(), "groups": int(value)})
    raise ConfigurationError(f"unknown sweep kind {kind!r}")


def sweep(spec: SweepSpec, scenario: ScenarioConfig, cfg: MarketConfig,
          drla_params: Optional[DrlaParams] = None, n_jobs: Optional[int] = None,
          show_progress: bool = False) -> pd.DataFrame:
    """
    Mean and spread of social welfare and worker count per sweep value and mechanism.

    Every sweep value reuses the instance-set seed, so the populations differ only in
    the swept quantity. The oracle is skipped where N exceeds its capacity.

    Args:
        spec: swept quantity, its values, mechanisms, instance count and seed
        scenario: population ranges at the base point
        cfg: market config at the base point
        drla_params: trained parameters, required when drla is swept
        n_jobs: joblib workers, defaults to the N_JOBS setting
        show_progress: tqdm progress bar over sweep values

    Returns:
        pd.DataFrame: one row per (value, mechanism) with the SWEEP_COLUMNS layout
    """
    n_jobs = n_jobs or get_settings().N_JOBS
    limit = get_settings().ORACLE_MAX_OWNERS
    rows = []
    for value in tqdm(spec.values, desc=f"sweep {spec.kind}", disable=not show_progress):
        point_scenario, point_cfg = apply_sweep_value(spec.kind, value, scenario, cfg)
        names = [m for m in spec.mechanisms if m != MechanismNames.ORACLE or point_scenario.n_owners <= limit]
        if len(names) < len(spec.mechanisms):
            logger.warning(f"Skipping the oracle at {spec.kind}={value}: N={point_scenario.n_owners} > {limit}")
        if not names:
            continue
        instances = generate_instances(point_scenario, point_cfg, spec.instances, spec.seed)
        per_instance = Parallel(n_jobs=n_jobs)(
            delayed(_evaluate_instance)(inst, names, point_cfg, drla_params) for inst in instances
        )
        frame = pd.DataFrame([row for rows_ in per_instance for row in rows_])
        for name in names:
            subset = frame[frame["mechanism"] == name]
            rows.append({
                "value": value,
                "mechanism": name,
                "mean_S": float(subset["welfare"].mean()),
                "std_S": float(subset["welfare"].std(ddof=0)),
                "mean_W": float(subset["workers"].mean()),
                "std_W": float(subset["workers"].std(ddof=0)),
                "n_instances": len(subset),
                "seed": spec.seed,
            })
        logger.info(f"Sweep {spec.kind}={value}: " + ", ".join(
            f"{r['mechanism']} S={r['mean_S']:.3f} W={r['mean_W']:.2f}" for r in rows[-len(names):]
        ))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def evaluate_mechanisms(instances: Sequence[MarketInstance], names: Sequence[str], cfg: MarketConfig,
                        drla_params: Optional[DrlaParams] = None, n_jobs: Optional[int] = None) -> pd.DataFrame:
    """Per-instance welfare and worker count per mechanism, with the ratio to the oracle optimum."""
    names = list(names)
    with_oracle = MechanismNames.ORACLE in names or all(
        len(inst.owners) <= get_settings().ORACLE_MAX_OWNERS for inst in instances
    )
    if with_oracle and MechanismNames.ORACLE not in names:
        names.append(MechanismNames.ORACLE)
    n_jobs = n_jobs or get_settings().N_JOBS
    per_instance = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_instance)(inst, names, cfg, drla_params) for inst in instances
    )
    frame = pd.DataFrame([row for rows in per_instance for row in rows],
                         columns=["seed", "mechanism", "welfare", "workers"])
    if with_oracle:
        optimum = frame[frame["mechanism"] == MechanismNames.ORACLE].set_index("seed")["welfare"]
        frame["ratio"] = [
            approx_ratio(w, optimum[s]) if optimum[s] > 0 else float("nan")
            for s, w in zip(frame["seed"], frame["welfare"])
        ]
    return frame


def rma_runtime_slope(sizes: Sequence[int], seed: int, scenario: Optional[ScenarioConfig] = None,
                      cfg: Optional[MarketConfig] = None, repeats: int = 3) -> Tuple[float, pd.DataFrame]:
    """Log-log slope of RMA wall time (allocation and payments) against N."""
    if len(sizes) < 2:
        raise InvalidInputError("runtime slope needs at least two sizes")
    scenario = scenario or ScenarioConfig()
    cfg = cfg or MarketConfig()
    timings = []
    for n in sizes:
        point_scenario = scenario.model_copy(update={"n_owners": int(n)})
        instances = generate_instances(point_scenario, cfg, repeats, seed)
        elapsed = []
        for inst in instances:
            start = time.perf_counter()
            run_rma(inst.owners, cfg, inst.seed)
            elapsed.append(time.perf_counter() - start)
        timings.append({"N": int(n), "seconds": float(np.median(elapsed))})
        logger.info(f"RMA runtime N={n}: {timings[-1]['seconds']:.4f}s")
    frame = pd.DataFrame(timings)
    slope = float(np.polyfit(np.log(frame["N"]), np.log(frame["seconds"]), 1)[0])
    return slope, frame
