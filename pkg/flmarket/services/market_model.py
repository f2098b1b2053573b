"""
Closed-form economics of the FL services market: data quality, owner and platform
costs, utilities and social welfare. Every function here is pure.
"""
import math
from typing import Dict, Iterable, Sequence, Union

from flmarket.core.exceptions import InvalidInputError
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, LabelDistribution, MarketConfig

Distribution = Union[LabelDistribution, Sequence[float]]


def uniform_distribution(label_count: int) -> LabelDistribution:
    return LabelDistribution(probs=tuple([1.0 / label_count] * label_count))


def label_distribution_from_counts(counts: Sequence[int]) -> LabelDistribution:
    """Empirical label distribution of a local dataset from its per-label counts."""
    total = float(sum(counts))
    if total <= 0:
        raise InvalidInputError("label counts must contain at least one sample")
    probs = [c / total for c in counts]
    # absorb rounding so the probabilities sum to one exactly
    probs[-1] = 1.0 - sum(probs[:-1])
    return LabelDistribution(probs=tuple(max(0.0, p) for p in probs))


def _probs(dist: Distribution) -> Sequence[float]:
    return dist.probs if isinstance(dist, LabelDistribution) else dist


def emd(p_i: Distribution, p_a: Distribution) -> float:
    """Earth mover's distance between a local label distribution and the reference one.

    Args:
        p_i: the owner's label distribution
        p_a: the reference (population) label distribution

    Returns:
        float: sum over labels of the absolute probability gap, in [0, 2]
    """
    left, right = _probs(p_i), _probs(p_a)
    if len(left) != len(right):
        raise InvalidInputError(
            f"label distributions differ in length ({len(left)} vs {len(right)})"
        )
    return float(sum(abs(a - b) for a, b in zip(left, right)))


def quality_alpha(delta: float, cfg: MarketConfig) -> float:
    return cfg.kappa4 * math.exp(-(((delta + cfg.kappa5) / cfg.kappa6) ** 2))


def shortfall(total_data: float, alpha: float, cfg: MarketConfig) -> float:
    """o(z) = kappa1*kappa7*exp(-kappa2*(kappa3*z)^alpha); convex and decreasing in z."""
    return cfg.kappa1 * cfg.kappa7 * math.exp(-cfg.kappa2 * (cfg.kappa3 * total_data) ** alpha)


def data_quality(total_data: float, delta: float, cfg: MarketConfig) -> float:
    if total_data < 0:
        raise InvalidInputError(f"total data size must be non-negative, got {total_data}")
    alpha = quality_alpha(delta, cfg)
    return alpha - cfg.kappa1 * math.exp(-cfg.kappa2 * (cfg.kappa3 * total_data) ** alpha)


def total_data(workers: Iterable[int], owners: Sequence[DataOwnerType]) -> float:
    return float(sum(owners[i].data_size for i in workers))


def mean_emd(workers: Iterable[int], owners: Sequence[DataOwnerType]) -> float:
    workers = list(workers)
    if not workers:
        return 0.0
    return float(sum(owners[i].emd for i in workers)) / len(workers)


def data_utility(workers: Iterable[int], owners: Sequence[DataOwnerType], cfg: MarketConfig) -> float:
    workers = list(workers)
    # phi of the empty trade is zero; the fitted curve is only meaningful with workers
    if not workers:
        return 0.0
    return cfg.kappa7 * data_quality(total_data(workers, owners), mean_emd(workers, owners), cfg)


def owner_data_cost(data_size: float, unit_data_cost: float) -> float:
    return data_size * unit_data_cost


def owner_compute_cost(data_size: float, cfg: MarketConfig, unit_compute_cost: float) -> float:
    return data_size * cfg.local_epochs * cfg.global_epochs * cfg.model_size * unit_compute_cost


def comm_power(channel_count: int, channel_gain: float, cfg: MarketConfig) -> float:
    """Transmit power needed to sustain the required rate over the requested channels."""
    if channel_count < 1:
        raise InvalidInputError(f"channel count must be at least 1, got {channel_count}")
    if channel_gain <= 0:
        raise InvalidInputError(f"channel gain must be positive, got {channel_gain}")
    total_bandwidth = cfg.bandwidth * channel_count
    return math.expm1(math.log(2.0) * cfg.rate / total_bandwidth) * total_bandwidth / channel_gain


def transmit_time(cfg: MarketConfig) -> float:
    return cfg.model_size / cfg.rate * cfg.global_epochs


def owner_comm_cost(channel_count: int, channel_gain: float, cfg: MarketConfig, unit_transmit_cost: float) -> float:
    return comm_power(channel_count, channel_gain, cfg) * transmit_time(cfg) * unit_transmit_cost


def owner_cost_breakdown(owner: DataOwnerType, cfg: MarketConfig) -> Dict[str, float]:
    data_cost = owner_data_cost(owner.data_size, owner.unit_data_cost)
    compute_cost = owner_compute_cost(owner.data_size, cfg, owner.unit_compute_cost)
    comm_cost = owner_comm_cost(owner.channel_count, owner.channel_gain, cfg, owner.unit_transmit_cost)
    return {
        "data": data_cost,
        "compute": compute_cost,
        "comm": comm_cost,
        "total": data_cost + compute_cost + comm_cost,
    }


def owner_total_cost(owner: DataOwnerType, cfg: MarketConfig) -> float:
    return owner_cost_breakdown(owner, cfg)["total"]


def truthful_owner(owner_id: int, data_size: float, emd_value: float, channels: Iterable[int],
                   channel_gain: float, unit_data_cost: float, unit_compute_cost: float,
                   unit_transmit_cost: float, cfg: MarketConfig) -> DataOwnerType:
    """Build an owner whose bid equals its true service cost."""
    draft = DataOwnerType(
        owner_id=owner_id,
        bid=0.0,
        data_size=data_size,
        emd=emd_value,
        channels=frozenset(channels),
        channel_gain=channel_gain,
        unit_data_cost=unit_data_cost,
        unit_compute_cost=unit_compute_cost,
        unit_transmit_cost=unit_transmit_cost,
    )
    return draft.model_copy(update={"bid": owner_total_cost(draft, cfg)})


def platform_comm_cost(owner: DataOwnerType, cfg: MarketConfig) -> float:
    return comm_power(owner.channel_count, owner.channel_gain, cfg) * transmit_time(cfg) * cfg.platform_transmit_cost


def platform_compute_increment(cfg: MarketConfig) -> float:
    return cfg.global_epochs * cfg.model_size * cfg.platform_compute_cost


def platform_cost(workers: Iterable[int], owners: Sequence[DataOwnerType], cfg: MarketConfig) -> float:
    workers = list(workers)
    if not workers:
        return 0.0
    compute = platform_compute_increment(cfg) * (len(workers) - 1)
    return compute + sum(platform_comm_cost(owners[i], cfg) for i in workers)


def platform_marginal_cost(owner: DataOwnerType, current_size: int, cfg: MarketConfig) -> float:
    """Increase of the platform cost when `owner` joins a worker set of `current_size`."""
    compute = platform_compute_increment(cfg) if current_size >= 1 else 0.0
    return compute + platform_comm_cost(owner, cfg)


def social_welfare(workers: Iterable[int], owners: Sequence[DataOwnerType], cfg: MarketConfig) -> float:
    workers = list(workers)
    if not workers:
        return 0.0
    owner_costs = sum(owner_total_cost(owners[i], cfg) for i in workers)
    return data_utility(workers, owners, cfg) - platform_cost(workers, owners, cfg) - owner_costs


def worker_utility(payment: float, cost: float) -> float:
    return payment - cost


def platform_utility(outcome: AuctionOutcome, owners: Sequence[DataOwnerType], cfg: MarketConfig) -> float:
    workers = outcome.sorted_winners()
    paid = sum(outcome.payment(i) for i in workers)
    return data_utility(workers, owners, cfg) - platform_cost(workers, owners, cfg) - paid


def check_instance(owners: Sequence[DataOwnerType]) -> None:
    """Owners are addressed by list position; ids must match positions."""
    for position, owner in enumerate(owners):
        if owner.owner_id != position:
            raise InvalidInputError(
                f"owner at position {position} carries id {owner.owner_id}; ids must be 0..N-1 in order"
            )
