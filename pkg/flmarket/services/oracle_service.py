"""
Ground-truth tools for small instances: exhaustive welfare maximization over feasible
worker sets, approximation ratios, and the bisection critical-bid oracle.
"""
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from flmarket.core.config import get_settings
from flmarket.core.exceptions import InvalidInputError, OracleCapacityError, OracleViolationError
from flmarket.core.logging_config import logger
from flmarket.schemas.auction import OracleResult
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, MarketConfig
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph

Mechanism = Callable[[Sequence[DataOwnerType]], AuctionOutcome]


def feasible_subsets(graph: ConflictGraph) -> Iterator[List[int]]:
    """Every independent set of the conflict graph, by include/exclude branching."""
    n = graph.n
    chosen: List[int] = []

    def branch(position: int, blocked: frozenset):
        if position == n:
            yield list(chosen)
            return
        yield from branch(position + 1, blocked)
        if position not in blocked:
            chosen.append(position)
            yield from branch(position + 1, blocked | graph.neighbors(position))
            chosen.pop()

    yield from branch(0, frozenset())


def optimal_welfare(owners: Sequence[DataOwnerType], cfg: MarketConfig,
                    graph: Optional[ConflictGraph] = None) -> OracleResult:
    settings = get_settings()
    n = len(owners)
    if n > settings.ORACLE_MAX_OWNERS:
        raise OracleCapacityError(n, settings.ORACLE_MAX_OWNERS)
    mm.check_instance(owners)
    graph = graph or ConflictGraph.from_owners(owners)

    data = [o.data_size for o in owners]
    emds = [o.emd for o in owners]
    # owner cost plus its platform-side transmit cost; the compute term depends on |W|
    fixed_cost = [mm.owner_total_cost(o, cfg) + mm.platform_comm_cost(o, cfg) for o in owners]
    increment = mm.platform_compute_increment(cfg)

    best_set: Tuple[int, ...] = ()
    best_welfare = 0.0
    evaluated = 0
    chosen: List[int] = []

    def consider(total: float, emd_sum: float, cost: float):
        nonlocal best_set, best_welfare, evaluated
        evaluated += 1
        size = len(chosen)
        if size == 0:
            welfare = 0.0
        else:
            quality = mm.data_quality(total, emd_sum / size, cfg)
            welfare = cfg.kappa7 * quality - increment * (size - 1) - cost
        candidate = tuple(chosen)
        if welfare > best_welfare or (
            welfare == best_welfare and (len(candidate), candidate) < (len(best_set), best_set)
        ):
            best_set, best_welfare = candidate, welfare

    def branch(position: int, blocked: frozenset, total: float, emd_sum: float, cost: float):
        if position == n:
            consider(total, emd_sum, cost)
            return
        branch(position + 1, blocked, total, emd_sum, cost)
        if position not in blocked:
            chosen.append(position)
            branch(position + 1, blocked | graph.neighbors(position),
                   total + data[position], emd_sum + emds[position], cost + fixed_cost[position])
            chosen.pop()

    branch(0, frozenset(), 0.0, 0.0, 0.0)
    logger.debug(f"Oracle evaluated {evaluated} feasible sets; best welfare {best_welfare:.4f}")
    return OracleResult(best_set=list(best_set), best_welfare=best_welfare, evaluated_count=evaluated)


def approx_ratio(mechanism_welfare: float, oracle_welfare: float) -> float:
    if oracle_welfare <= 0:
        raise InvalidInputError(f"approximation ratio needs a positive optimum, got {oracle_welfare}")
    return float(min(1.0, max(0.0, mechanism_welfare / oracle_welfare)))


def standalone_bid_bound(owner: DataOwnerType, cfg: MarketConfig) -> float:
    """Standalone data utility of one owner plus one; no sensible mechanism pays more."""
    return cfg.kappa7 * max(mm.quality_alpha(0.0, cfg), cfg.kappa1) + 1.0


def _with_bid(owners: Sequence[DataOwnerType], i: int, bid: float) -> List[DataOwnerType]:
    updated = list(owners)
    updated[i] = owners[i].model_copy(update={"bid": bid})
    return updated


def wins_with_bid(mechanism: Mechanism, owners: Sequence[DataOwnerType], i: int, bid: float) -> bool:
    updated = _with_bid(owners, i, bid)
    # allocation-only path skips payment computation when the mechanism offers one
    allocate = getattr(mechanism, "allocate", None)
    if allocate is not None:
        return i in allocate(updated)
    return i in mechanism(updated).winners


def critical_bid_bisection(mechanism: Mechanism, owners: Sequence[DataOwnerType], i: int,
                           tol: float = 1e-9, upper: Optional[float] = None,
                           cfg: Optional[MarketConfig] = None, scan_points: int = 8) -> Optional[float]:
    """Supremum winning bid of owner i with everyone else fixed.

    Args:
        mechanism: callable mapping an owner list to an AuctionOutcome
        owners: the instance; owner i's reported bid is the lower end of the search
        i: owner id
        tol: bisection stops once the bracket is narrower than this
        upper: losing bid used as the upper end; defaults to the mechanism's own bound
            (``upper_bid_bound``) or the standalone utility plus one
        cfg: market config, needed only for the default bound
        scan_points: evenly spaced bids checked for a win above a loss before bisecting

    Returns:
        Optional[float]: the critical bid, or None when i does not win at its own bid
    """
    lower = owners[i].bid
    if upper is None:
        if hasattr(mechanism, "upper_bid_bound"):
            upper = mechanism.upper_bid_bound(owners, i)
        elif cfg is not None:
            upper = standalone_bid_bound(owners[i], cfg)
        else:
            raise InvalidInputError("critical_bid_bisection needs an upper bound or a market config")

    if not wins_with_bid(mechanism, owners, i, lower):
        return None
    if wins_with_bid(mechanism, owners, i, upper):
        raise OracleViolationError(f"still wins at the upper bound {upper}", owner_id=i)

    if scan_points > 0:
        seen_loss = None
        for bid in np.linspace(lower, upper, scan_points + 2)[1:-1]:
            won = wins_with_bid(mechanism, owners, i, float(bid))
            if won and seen_loss is not None:
                raise OracleViolationError(
                    f"wins at bid {bid:.6g} but loses at the lower bid {seen_loss:.6g}", owner_id=i
                )
            if not won and seen_loss is None:
                seen_loss = float(bid)
            elif won:
                lower = float(bid)
        if seen_loss is not None:
            upper = seen_loss

    while upper - lower > tol:
        middle = 0.5 * (lower + upper)
        if wins_with_bid(mechanism, owners, i, middle):
            lower = middle
        else:
            upper = middle
    return 0.5 * (lower + upper)
