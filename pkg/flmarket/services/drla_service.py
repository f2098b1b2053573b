"""
Learned auction (DRLA) at inference time.

A graph convolutional network embeds the conflict graph, each owner gets a score
Q_i = ReLU(f_i Phi1) Phi2 - b_i exp(phi3) + g(d_i, sigma_i) exp(phi4), and owners are
picked greedily by score under the channel constraint. Scores are strictly decreasing
in the bid and g is monotone by construction, so the allocation is bid-monotone and
critical payments exist.
"""
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from flmarket.core.config import get_settings
from flmarket.core.constants import MechanismNames, PaymentBranch
from flmarket.core.exceptions import InvalidInputError, OracleViolationError, ParamsFormatError
from flmarket.core.logging_config import logger
from flmarket.nn import autodiff as ad
from flmarket.nn.serialization import load_params, save_params
from flmarket.schemas.market import AuctionOutcome, DataOwnerType, MarketConfig
from flmarket.schemas.training import DrlaHyperParams
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.oracle_service import critical_bid_bisection


class DrlaParams:
    """Named parameter arrays of the scoring network plus the shape they were built for."""

    def __init__(self, hyper: DrlaHyperParams, arrays: Mapping[str, np.ndarray]):
        self.hyper = hyper
        expected = self.expected_shapes(hyper)
        missing = sorted(set(expected) - set(arrays))
        if missing:
            raise ParamsFormatError(f"missing parameters {missing}")
        for name, shape in expected.items():
            if tuple(np.shape(arrays[name])) != shape:
                raise ParamsFormatError(f"parameter {name} has shape {np.shape(arrays[name])}, expected {shape}")
        self.arrays: Dict[str, np.ndarray] = {name: np.array(arrays[name], dtype=np.float64) for name in expected}

    @staticmethod
    def expected_shapes(hyper: DrlaHyperParams) -> Dict[str, Tuple[int, int]]:
        width, features = hyper.embedding_dim, hyper.feature_dim
        units = hyper.monotone_groups * hyper.monotone_units
        shapes = {f"gcn.{layer}": (width, width) for layer in range(hyper.gcn_layers)}
        shapes.update({
            "q.phi1": (features, features),
            "q.phi2": (features, 1),
            "q.phi3": (1, 1),
            "q.phi4": (1, 1),
            "mono.w1": (2, units),
            "mono.b1": (1, units),
            "mono.w2": (1, units),
            "mono.b2": (1, units),
        })
        return shapes

    @classmethod
    def initialize(cls, hyper: DrlaHyperParams, seed: int) -> "DrlaParams":
        rng = np.random.default_rng(seed)
        width, features = hyper.embedding_dim, hyper.feature_dim
        units = hyper.monotone_groups * hyper.monotone_units
        arrays = {f"gcn.{layer}": rng.normal(0.0, 1.0 / np.sqrt(width), (width, width))
                  for layer in range(hyper.gcn_layers)}
        arrays.update({
            "q.phi1": rng.normal(0.0, 0.1 / np.sqrt(features), (features, features)),
            "q.phi2": rng.normal(0.0, 0.1 / np.sqrt(features), (features, 1)),
            "q.phi3": np.zeros((1, 1)),
            "q.phi4": np.zeros((1, 1)),
            "mono.w1": rng.normal(0.0, 0.5, (2, units)),
            "mono.b1": rng.normal(0.0, 0.5, (1, units)),
            "mono.w2": rng.normal(0.0, 0.5, (1, units)),
            "mono.b2": np.zeros((1, units)),
        })
        return cls(hyper, arrays)

    def copy(self) -> "DrlaParams":
        return DrlaParams(self.hyper, {name: value.copy() for name, value in self.arrays.items()})

    def tensors(self, trainable: bool = False) -> Dict[str, ad.Tensor]:
        if trainable:
            return {name: ad.parameter(value, name=name) for name, value in self.arrays.items()}
        return {name: ad.constant(value) for name, value in self.arrays.items()}

    @property
    def bid_coefficient(self) -> float:
        return float(np.exp(self.arrays["q.phi3"][0, 0]))

    @property
    def quality_coefficient(self) -> float:
        return float(np.exp(self.arrays["q.phi4"][0, 0]))

    def save(self, path: Union[str, Path]) -> Path:
        return save_params(path, self.arrays, self.hyper.model_dump())

    @classmethod
    def load(cls, path: Union[str, Path], hyper: Optional[DrlaHyperParams] = None) -> "DrlaParams":
        expected = hyper.model_dump() if hyper is not None else None
        header, arrays = load_params(path, expected_hyper=expected)
        try:
            stored = DrlaHyperParams(**header)
        except ValueError as e:
            raise ParamsFormatError(f"invalid hyper-parameter header: {e}") from e
        return cls(stored, arrays)


class InstanceFeatures:
    """Per-owner inputs of the scoring network for one owner population."""

    def __init__(self, owners: Sequence[DataOwnerType], hyper: DrlaHyperParams,
                 graph: Optional[ConflictGraph] = None):
        self.owners = list(owners)
        self.graph = graph or ConflictGraph.from_owners(owners)
        self.n = len(self.owners)
        self.adjacency = self.graph.normalized_adjacency()

        def column(values):
            return np.asarray(values, dtype=np.float64).reshape(-1, 1)

        self.bids = column([o.bid for o in self.owners])
        self.data = column([o.data_size for o in self.owners])
        self.emd = column([o.emd for o in self.owners])
        self.channels = column([o.channel_count / hyper.channel_scale for o in self.owners])
        self.gains = column([o.channel_gain / hyper.gain_scale for o in self.owners])


def _embed(features: Sequence[InstanceFeatures], tensors: Mapping[str, ad.Tensor],
           hyper: DrlaHyperParams) -> ad.Tensor:
    """[node embedding, graph embedding] rows for every owner of every instance, stacked."""
    sizes = [f.n for f in features]
    bounds = np.cumsum([0] + sizes)
    segments = list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
    blocks = [f.adjacency for f in features]
    hidden = ad.constant(np.ones((int(bounds[-1]), hyper.embedding_dim)))
    for layer in range(hyper.gcn_layers):
        hidden = ad.relu(ad.block_propagate(blocks, hidden @ tensors[f"gcn.{layer}"], segments))
    owner_instance = np.repeat(np.arange(len(features)), sizes)
    graph_rows = ad.gather_rows(ad.segment_sum(hidden, segments), owner_instance)
    return ad.concat_cols([hidden, graph_rows])


def _monotone(data: np.ndarray, emd: np.ndarray, tensors: Mapping[str, ad.Tensor],
              hyper: DrlaHyperParams) -> ad.Tensor:
    inputs = ad.constant(np.hstack([data, -emd]))
    hidden = ad.relu(ad.add_row(inputs @ ad.exp(tensors["mono.w1"]), tensors["mono.b1"]))
    units = ad.relu(ad.add_row(ad.mul_row(hidden, ad.exp(tensors["mono.w2"])), tensors["mono.b2"]))
    return ad.max_cols(ad.min_groups(units, hyper.monotone_units))


def score_tensor(features: Sequence[InstanceFeatures], tensors: Mapping[str, ad.Tensor],
                 hyper: DrlaHyperParams, states: Optional[Sequence[np.ndarray]] = None) -> ad.Tensor:
    """
    Scores of every owner of a batch of instances as one (total owners, 1) column.

    Args:
        features: instances in batch order
        tensors: network parameters, trainable or constant
        hyper: network shape
        states: optional 0/1 selection vector per instance; zeros when omitted

    Returns:
        ad.Tensor: stacked per-owner scores
    """
    embeddings = _embed(features, tensors, hyper)
    if states is None:
        state = np.zeros((embeddings.shape[0], 1))
    else:
        state = np.concatenate([np.asarray(s, dtype=np.float64).reshape(-1, 1) for s in states])
    stacked = {
        name: np.vstack([getattr(f, name) for f in features])
        for name in ("bids", "data", "emd", "channels", "gains")
    }
    nonlinear_in = ad.concat_cols([embeddings, ad.constant(state),
                                   ad.constant(stacked["channels"]), ad.constant(stacked["gains"])])
    nonlinear = ad.relu(nonlinear_in @ tensors["q.phi1"]) @ tensors["q.phi2"]
    bid_term = ad.mul_scalar_tensor(ad.constant(stacked["bids"]), ad.exp(tensors["q.phi3"]))
    quality = ad.mul_scalar_tensor(_monotone(stacked["data"], stacked["emd"], tensors, hyper),
                                   ad.exp(tensors["q.phi4"]))
    return nonlinear - bid_term + quality


class _GraphOnly:
    def __init__(self, graph: ConflictGraph):
        self.n = graph.n
        self.adjacency = graph.normalized_adjacency()



def gcn_embed(graph: ConflictGraph, params: DrlaParams) -> np.ndarray:
    if graph.n == 0:
        return np.zeros((0, 2 * params.hyper.embedding_dim))
    features = _GraphOnly(graph)
    return _embed([features], params.tensors(), params.hyper).value


def monotonic_g(data_size, emd, params: DrlaParams) -> np.ndarray:
    """Normalized data size g for one owner or a vector of owners."""
    data = np.asarray(data_size, dtype=np.float64).reshape(-1, 1)
    sigma = np.asarray(emd, dtype=np.float64).reshape(-1, 1)
    if data.shape != sigma.shape:
        raise InvalidInputError(f"data sizes {data.shape} and EMDs {sigma.shape} differ in length")
    values = _monotone(data, sigma, params.tensors(), params.hyper).value[:, 0]
    return values if np.ndim(data_size) else float(values[0])


def q_scores(owners: Sequence[DataOwnerType], params: DrlaParams, graph: Optional[ConflictGraph] = None,
             state: Optional[Sequence[int]] = None) -> np.ndarray:
    """Per-owner scores; `state` lists owners already selected."""
    if not owners:
        return np.zeros(0)
    features = InstanceFeatures(owners, params.hyper, graph)
    selected = np.zeros(features.n)
    if state:
        selected[list(state)] = 1.0
    return score_tensor([features], params.tensors(), params.hyper, [selected]).value[:, 0]


def greedy_by_score(scores: Sequence[float], graph: ConflictGraph,
                    skip: Optional[int] = None) -> List[int]:
    """Highest score first (ties to the smaller id), skipping conflicts, until the best score is <= 0."""
    order = sorted((k for k in range(len(scores)) if k != skip), key=lambda k: (-scores[k], k))
    picks: List[int] = []
    blocked = set()
    for k in order:
        if scores[k] <= 0.0:
            break
        if k in blocked:
            continue
        picks.append(k)
        blocked |= graph.neighbors(k)
    return picks


def allocate(owners: Sequence[DataOwnerType], params: DrlaParams,
             graph: Optional[ConflictGraph] = None) -> FrozenSet[int]:
    # a candidate's score sees the state only through its own selection bit, which is 0
    if not owners:
        return frozenset()
    graph = graph or ConflictGraph.from_owners(owners)
    return frozenset(greedy_by_score(q_scores(owners, params, graph), graph))


def critical_threshold(i: int, scores: Sequence[float], graph: ConflictGraph) -> Tuple[float, str]:
    """Score owner i must beat: the first pick of the run without i that conflicts with i, or 0."""
    conflicts = graph.neighbors(i)
    for k in greedy_by_score(scores, graph, skip=i):
        if k in conflicts:
            return max(0.0, float(scores[k])), PaymentBranch.CONFLICT
    return 0.0, PaymentBranch.EXHAUSTION


def closed_form_payment(owners: Sequence[DataOwnerType], i: int, scores: Sequence[float], graph: ConflictGraph,
                        params: DrlaParams) -> Tuple[float, str]:
    """Bid that brings Q_i down to its critical threshold, with the threshold's branch."""
    threshold, branch = critical_threshold(i, scores, graph)
    return float(owners[i].bid + (scores[i] - threshold) / params.bid_coefficient), branch


def critical_payment_drla(owners: Sequence[DataOwnerType], params: DrlaParams, i: int,
                          graph: Optional[ConflictGraph] = None, check: bool = False,
                          cfg: Optional[MarketConfig] = None) -> float:
    """
    Supremum bid at which owner i still wins, all other reports fixed.

    The score is affine in the bid with slope -exp(phi3), so the bid that brings Q_i
    down to the critical threshold is found in closed form.

    Args:
        owners: the instance
        params: trained network parameters
        i: owner id
        graph: conflict graph, built from the owners when omitted
        check: also run the bisection oracle and raise OracleViolationError on disagreement
        cfg: market config for the bisection's mechanism wrapper

    Returns:
        float: the critical bid
    """
    graph = graph or ConflictGraph.from_owners(owners)
    payment, _ = closed_form_payment(owners, i, q_scores(owners, params, graph), graph, params)
    if check:
        mechanism = DrlaMechanism(cfg or MarketConfig(), params)
        reference = critical_bid_bisection(mechanism, owners, i)
        tolerance = get_settings().PAYMENT_TOLERANCE
        if reference is None or abs(reference - payment) > tolerance * (1.0 + abs(payment)):
            raise OracleViolationError(
                f"closed-form payment {payment:.9g} disagrees with bisection {reference}", owner_id=i
            )
    return float(payment)


def run_drla(owners: Sequence[DataOwnerType], cfg: MarketConfig, params: DrlaParams,
             graph: Optional[ConflictGraph] = None) -> AuctionOutcome:
    mm.check_instance(owners)
    if not owners:
        return AuctionOutcome(mechanism=MechanismNames.DRLA)
    graph = graph or ConflictGraph.from_owners(owners)
    scores = q_scores(owners, params, graph)
    winners = greedy_by_score(scores, graph)

    payments = {o.owner_id: 0.0 for o in owners}
    branches: Dict[int, str] = {}
    for i in winners:
        payments[i], branches[i] = closed_form_payment(owners, i, scores, graph, params)

    welfare = mm.social_welfare(winners, owners, cfg)
    logger.debug(f"DRLA: {len(winners)} winners, welfare={welfare:.4f}")
    return AuctionOutcome(
        winners=frozenset(winners),
        payments=payments,
        social_welfare=welfare,
        mechanism=MechanismNames.DRLA,
        payment_branch=branches,
    )


class DrlaMechanism:
    """DRLA with fixed parameters, callable on an owner list."""

    name = MechanismNames.DRLA

    def __init__(self, cfg: MarketConfig, params: DrlaParams):
        self.cfg = cfg
        self.params = params

    def __call__(self, owners: Sequence[DataOwnerType]) -> AuctionOutcome:
        return run_drla(owners, self.cfg, self.params)

    def allocate(self, owners: Sequence[DataOwnerType]) -> FrozenSet[int]:
        return allocate(owners, self.params)

    def upper_bid_bound(self, owners: Sequence[DataOwnerType], i: int) -> float:
        """Any bid above this drives Q_i below zero."""
        score = q_scores(owners, self.params)[i]
        return owners[i].bid + max(score, 0.0) / self.params.bid_coefficient + 1.0
