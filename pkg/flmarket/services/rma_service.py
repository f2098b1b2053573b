"""
Reverse multi-dimensional auction (RMA): owners are split into EMD groups, groups are
visited in a seeded random order, each group runs a greedy selection on marginal
virtual social-welfare density, and each winner is paid its critical bid.
"""
import math
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, TypedDict

import numpy as np

from flmarket.core.constants import MechanismNames, PaymentBranch
from flmarket.core.exceptions import InvalidInputError
from flmarket.core.logging_config import logger
from flmarket.schemas.auction import GroupPartition
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, MarketConfig
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph


class RmaState(TypedDict):
    accumulated: Set[int]
    group_order: List[int]
    payments: Dict[int, float]
    group_of_winner: Dict[int, int]
    branches: Dict[int, str]


def group_index(sigma: float, cfg: MarketConfig) -> int:
    if sigma < 0 or sigma > cfg.sigma_max + 1e-12:
        raise InvalidInputError(f"EMD {sigma} outside the admissible range [0, {cfg.sigma_max}]")
    # [(j-1)eps, j eps) -> j; sigma_max itself belongs to the last group
    return min(cfg.groups, int(math.floor(sigma / cfg.group_width)) + 1)


def virtual_emd(group: int, cfg: MarketConfig) -> float:
    return (2 * group - 1) * cfg.sigma_max / (2 * cfg.groups)


def group_partition(owners: Sequence[DataOwnerType], cfg: MarketConfig) -> GroupPartition:
    return GroupPartition(
        group_of={owner.owner_id: group_index(owner.emd, cfg) for owner in owners},
        virtual_emd={j: virtual_emd(j, cfg) for j in range(1, cfg.groups + 1)},
        width=cfg.group_width,
    )


def group_order(groups: int, seed: int) -> List[int]:
    rng = np.random.default_rng(seed)
    return [int(j) + 1 for j in rng.permutation(groups)]


class _GroupDensity:
    """Vectorized marginal densities for one group's candidates under its virtual EMD."""

    def __init__(self, owners: Sequence[DataOwnerType], cfg: MarketConfig, graph: ConflictGraph, group: int):
        self.cfg = cfg
        self.alpha = mm.quality_alpha(virtual_emd(group, cfg), cfg)
        self.data = np.array([o.data_size for o in owners], dtype=float)
        self.bids = np.array([o.bid for o in owners], dtype=float)
        self.ell = np.array([graph.ell(o.owner_id) for o in owners], dtype=float)
        self.platform_comm = np.array([mm.platform_comm_cost(o, cfg) for o in owners], dtype=float)
        self.compute_increment = mm.platform_compute_increment(cfg)
        self.scale = cfg.kappa1 * cfg.kappa7

    def shortfall(self, total):
        return self.scale * np.exp(-self.cfg.kappa2 * (self.cfg.kappa3 * total) ** self.alpha)

    def surplus(self, ids, total_data: float, size: int):
        """Marginal virtual welfare before the bid: o(D) - o(D + d_i) - c_hat({i})."""
        ids = np.asarray(ids, dtype=int)
        increment = self.compute_increment if size >= 1 else 0.0
        return (self.shortfall(total_data) - self.shortfall(total_data + self.data[ids])
                - increment - self.platform_comm[ids])

    def densities(self, ids, total_data: float, size: int):
        ids = np.asarray(ids, dtype=int)
        return (self.surplus(ids, total_data, size) - self.bids[ids]) / self.ell[ids]


def marginal_density(i: int, members: Sequence[int], group: int, owners: Sequence[DataOwnerType],
                     cfg: MarketConfig, graph: ConflictGraph) -> float:
    """V_i^j(S): marginal virtual social welfare of adding i to S, divided by ell_i."""
    if i in members:
        raise InvalidInputError(f"owner {i} is already in the set")
    alpha = mm.quality_alpha(virtual_emd(group, cfg), cfg)
    base = mm.total_data(members, owners)
    owner = owners[i]
    gain = mm.shortfall(base, alpha, cfg) - mm.shortfall(base + owner.data_size, alpha, cfg)
    cost = mm.platform_marginal_cost(owner, len(members), cfg)
    return (gain - cost - owner.bid) / graph.ell(i)


def _greedy_picks(pool: Sequence[int], base_data: float, base_size: int, density: _GroupDensity,
                  graph: ConflictGraph) -> List[int]:
    remaining = sorted(pool)
    picks: List[int] = []
    total, size = base_data, base_size
    while remaining:
        values = density.densities(remaining, total, size)
        best = int(np.argmax(values))  # first maximum -> smallest id
        candidate, value = remaining[best], float(values[best])
        if value <= 0.0:
            break
        picks.append(candidate)
        total += density.data[candidate]
        size += 1
        blocked = graph.neighbors(candidate)
        remaining = [k for k in remaining if k != candidate and k not in blocked]
    return picks


def select_winners(group: int, pool: Sequence[int], accumulated: Sequence[int], owners: Sequence[DataOwnerType],
                   cfg: MarketConfig, graph: ConflictGraph) -> List[int]:
    """Greedy winners of one group; `pool` must already exclude owners conflicting with `accumulated`."""
    density = _GroupDensity(owners, cfg, graph, group)
    picks = _greedy_picks(pool, mm.total_data(accumulated, owners), len(accumulated), density, graph)
    return picks


def _critical_payment(i: int, pool: Sequence[int], base_data: float, base_size: int,
                      density: _GroupDensity, graph: ConflictGraph) -> Tuple[float, str]:
    remaining = sorted(k for k in pool if k != i)
    conflicts = graph.neighbors(i)
    ell_i = density.ell[i]
    total, size = base_data, base_size
    payment, branch = -math.inf, PaymentBranch.EXHAUSTION
    while True:
        surplus_i = float(density.surplus([i], total, size)[0])
        if not remaining:
            payment = max(payment, surplus_i)
            break
        values = density.densities(remaining, total, size)
        best = int(np.argmax(values))
        candidate, value = remaining[best], float(values[best])
        if value <= 0.0:
            # replay stops here; i only has to keep a positive density
            payment = max(payment, surplus_i)
            break
        # bid at which V_i equals the replacement's density at this step
        payment = max(payment, surplus_i - ell_i * value)
        if candidate in conflicts:
            branch = PaymentBranch.CONFLICT
            break
        total += density.data[candidate]
        size += 1
        blocked = graph.neighbors(candidate)
        remaining = [k for k in remaining if k != candidate and k not in blocked]
    return payment, branch


def critical_payment(i: int, group: int, accumulated: Sequence[int], owners: Sequence[DataOwnerType],
                     cfg: MarketConfig, graph: ConflictGraph) -> float:
    """Supremum bid at which winner i still wins group `group`, others fixed."""
    density = _GroupDensity(owners, cfg, graph, group)
    partition = group_partition(owners, cfg)
    excluded = graph.conflict_set(accumulated)
    pool = [k for k in partition.members(group) if k not in excluded and k not in accumulated]
    payment, _ = _critical_payment(i, pool, mm.total_data(accumulated, owners), len(accumulated), density, graph)
    return payment


def rma_winners(owners: Sequence[DataOwnerType], cfg: MarketConfig, rng_seed: int,
                graph: Optional[ConflictGraph] = None) -> FrozenSet[int]:
    """Winner set only, without payments."""
    if not owners:
        return frozenset()
    graph = graph or ConflictGraph.from_owners(owners)
    partition = group_partition(owners, cfg)
    accumulated: List[int] = []
    for group in group_order(cfg.groups, rng_seed):
        excluded = graph.conflict_set(accumulated)
        pool = [k for k in partition.members(group) if k not in excluded]
        if not pool:
            continue
        density = _GroupDensity(owners, cfg, graph, group)
        picks = _greedy_picks(pool, mm.total_data(accumulated, owners), len(accumulated), density, graph)
        accumulated.extend(picks)
    return frozenset(accumulated)


def run_rma(owners: Sequence[DataOwnerType], cfg: MarketConfig, rng_seed: int,
            graph: Optional[ConflictGraph] = None) -> AuctionOutcome:
    mm.check_instance(owners)
    if not owners:
        return AuctionOutcome(mechanism=MechanismNames.RMA, seed=rng_seed)
    graph = graph or ConflictGraph.from_owners(owners)
    partition = group_partition(owners, cfg)
    state: RmaState = {
        "accumulated": set(),
        "group_order": group_order(cfg.groups, rng_seed),
        "payments": {o.owner_id: 0.0 for o in owners},
        "group_of_winner": {},
        "branches": {},
    }

    for group in state["group_order"]:
        members = partition.members(group)
        if not members:
            continue
        accumulated = sorted(state["accumulated"])
        excluded = graph.conflict_set(accumulated)
        pool = [k for k in members if k not in excluded]
        density = _GroupDensity(owners, cfg, graph, group)
        base_data = mm.total_data(accumulated, owners)
        picks = _greedy_picks(pool, base_data, len(accumulated), density, graph)

        for i in picks:
            payment, branch = _critical_payment(i, pool, base_data, len(accumulated), density, graph)
            state["payments"][i] = payment
            state["branches"][i] = branch
            state["group_of_winner"][i] = group
        state["accumulated"].update(picks)
        logger.debug(f"RMA group {group}: pool={len(pool)} winners={picks}")

    winners = frozenset(state["accumulated"])
    welfare = mm.social_welfare(sorted(winners), owners, cfg)
    logger.debug(f"RMA seed={rng_seed}: {len(winners)} winners, welfare={welfare:.4f}")
    return AuctionOutcome(
        winners=winners,
        payments=state["payments"],
        social_welfare=welfare,
        mechanism=MechanismNames.RMA,
        group_of=state["group_of_winner"],
        payment_branch=state["branches"],
        seed=rng_seed,
    )


class RmaMechanism:
    """RMA with its group order pinned by a seed, callable on an owner list."""

    name = MechanismNames.RMA

    def __init__(self, cfg: MarketConfig, seed: int):
        self.cfg = cfg
        self.seed = seed

    def __call__(self, owners: Sequence[DataOwnerType]) -> AuctionOutcome:
        return run_rma(owners, self.cfg, self.seed)

    def allocate(self, owners: Sequence[DataOwnerType]) -> FrozenSet[int]:
        return rma_winners(owners, self.cfg, self.seed)

    def with_seed(self, seed: int) -> "RmaMechanism":
        return RmaMechanism(self.cfg, seed)

    def upper_bid_bound(self, owners: Sequence[DataOwnerType], i: int) -> float:
        """No bid above o(0) - o(d_i) under i's virtual EMD can win; that is the largest surplus i can reach."""
        owner = owners[i]
        alpha = mm.quality_alpha(virtual_emd(group_index(owner.emd, self.cfg), self.cfg), self.cfg)
        return mm.shortfall(0.0, alpha, self.cfg) - mm.shortfall(owner.data_size, alpha, self.cfg) + 1.0
