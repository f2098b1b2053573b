import numpy as np
import pytest

from flmarket.core.exceptions import InvalidInputError, ParamsFormatError
from flmarket.nn import autodiff as ad
from flmarket.schemas.training import DrlaHyperParams
from flmarket.services import market_model as mm
from flmarket.services.conflict_graph import ConflictGraph
from flmarket.services.drla_service import (
    DrlaMechanism,
    DrlaParams,
    InstanceFeatures,
    allocate,
    closed_form_payment,
    critical_payment_drla,
    critical_threshold,
    gcn_embed,
    greedy_by_score,
    monotonic_g,
    q_scores,
    run_drla,
    score_tensor,
)


def test_monotone_network_reduces_to_hinge(linear_quality_params):
    assert monotonic_g(3.0, 1.0, linear_quality_params) == pytest.approx(2.0)
    assert monotonic_g(0.5, 1.0, linear_quality_params) == 0.0
    assert monotonic_g(0.0, 0.0, linear_quality_params) == 0.0
    values = monotonic_g(np.array([4.0, 1.0]), np.array([0.5, 1.5]), linear_quality_params)
    assert np.allclose(values, [3.5, 0.0])
    with pytest.raises(InvalidInputError):
        monotonic_g(np.array([1.0, 2.0]), np.array([0.1]), linear_quality_params)


def test_monotone_network_is_monotone(small_hyper):
    params = DrlaParams.initialize(small_hyper, seed=3)
    rng = np.random.default_rng(3)
    data = rng.uniform(0.0, 10.0, 200)
    sigma = rng.uniform(0.0, 1.2, 200)
    base = monotonic_g(data, sigma, params)
    assert np.all(monotonic_g(data + 1.0, sigma, params) >= base - 1e-12)
    assert np.all(monotonic_g(data, sigma + 0.1, params) <= base + 1e-12)


def test_scores_reduce_to_negative_bid(bid_only_params, three_owners):
    params = bid_only_params
    scores = q_scores(three_owners, params)
    assert np.allclose(scores, [-o.bid for o in three_owners], atol=1e-9)


def test_bid_shift_moves_only_own_score(small_hyper, three_owners):
    params = DrlaParams.initialize(small_hyper, seed=1)
    params.arrays["q.phi3"] = np.full((1, 1), 0.3)
    before = q_scores(three_owners, params)
    shifted = list(three_owners)
    shifted[1] = three_owners[1].model_copy(update={"bid": three_owners[1].bid + 1.0})
    after = q_scores(shifted, params)
    assert before[1] - after[1] == pytest.approx(np.exp(0.3), rel=1e-9)
    assert after[0] == pytest.approx(before[0], abs=1e-12)
    assert after[2] == pytest.approx(before[2], abs=1e-12)


def test_lower_emd_never_scores_lower(small_hyper, make_owner):
    params = DrlaParams.initialize(small_hyper, seed=2)
    owners = [make_owner(0, emd=0.2, channels={1}), make_owner(1, emd=0.8, channels={1})]
    scores = q_scores(owners, params)
    assert scores[0] >= scores[1]


def test_gcn_identity_layers(small_hyper):
    params = DrlaParams.initialize(small_hyper, seed=0)
    for layer in range(small_hyper.gcn_layers):
        params.arrays[f"gcn.{layer}"] = np.eye(small_hyper.embedding_dim)
    embedding = gcn_embed(ConflictGraph.build([{1}, {2}, {3}]), params)
    assert embedding.shape == (3, 8)
    assert np.allclose(embedding[:, :4], 1.0)
    assert np.allclose(embedding[:, 4:], 3.0)


def test_gcn_symmetric_nodes_share_embeddings(small_hyper):
    params = DrlaParams.initialize(small_hyper, seed=4)
    embedding = gcn_embed(ConflictGraph.build([{1, 4, 6}, {2, 5, 6}, {3, 7}]), params)
    assert np.allclose(embedding[0], embedding[1])
    assert np.allclose(embedding[0, 4:], embedding[:, :4].sum(axis=0))
    assert gcn_embed(ConflictGraph.build([]), params).shape == (0, 8)


def test_score_gradients_match_finite_differences(small_hyper, three_owners):
    params = DrlaParams.initialize(small_hyper, seed=6)
    features = [InstanceFeatures(three_owners, small_hyper)]
    tensors = params.tensors(trainable=True)

    def loss():
        return ad.sum_all(score_tensor(features, tensors, small_hyper))

    ad.backward(loss())
    for name, tensor in tensors.items():
        numeric = ad.numerical_gradient(lambda: loss().item(), tensor)
        scale = max(np.linalg.norm(tensor.grad) + np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(tensor.grad - numeric) / scale < 1e-4, name


def test_greedy_by_score():
    graph = ConflictGraph.build([{1, 4, 6}, {2, 5, 6}, {3, 7}])
    assert greedy_by_score([3.0, 2.0, -1.0], graph) == [0]
    assert greedy_by_score([-1.0, -2.0, 0.0], graph) == []
    assert greedy_by_score([1.0, 2.0, 0.5], graph) == [1, 2]
    assert greedy_by_score([1.0, 2.0, 0.5], graph, skip=1) == [0, 2]


def test_lone_owner_pays_critical_bid_zero(bid_only_params, make_owner):
    params = bid_only_params
    owners = [make_owner(0, bid=-1.0)]
    assert allocate(owners, params) == {0}
    assert critical_payment_drla(owners, params, 0) == pytest.approx(0.0, abs=1e-9)


def test_conflicting_loser_sets_the_payment(bid_only_params, make_owner, cfg):
    params = bid_only_params
    owners = [make_owner(0, bid=-2.0, channels={1}), make_owner(1, bid=-1.0, channels={1})]
    outcome = run_drla(owners, cfg, params)
    assert outcome.winners == {0}
    assert outcome.payment(0) == pytest.approx(-1.0, abs=1e-9)
    threshold, branch = critical_threshold(0, q_scores(owners, params), ConflictGraph.from_owners(owners))
    assert threshold == pytest.approx(1.0, abs=1e-9)
    assert branch == "conflict"


def test_closed_form_payment_matches_bisection(cfg, small_instances, linear_quality_params):
    checked = 0
    for instance in small_instances:
        outcome = run_drla(instance.owners, cfg, linear_quality_params)
        for i in outcome.sorted_winners():
            payment = critical_payment_drla(instance.owners, linear_quality_params, i, check=True, cfg=cfg)
            assert payment == pytest.approx(outcome.payment(i))
            checked += 1
    assert checked > 0


def test_run_drla_and_single_payment_share_the_formula(cfg, small_instances, linear_quality_params):
    for instance in small_instances:
        owners = instance.owners
        graph = ConflictGraph.from_owners(owners)
        scores = q_scores(owners, linear_quality_params, graph)
        outcome = run_drla(owners, cfg, linear_quality_params)
        for i in outcome.sorted_winners():
            payment, branch = closed_form_payment(owners, i, scores, graph, linear_quality_params)
            assert outcome.payment(i) == payment
            assert outcome.payment_branch[i] == branch
            assert critical_payment_drla(owners, linear_quality_params, i, graph=graph) == payment


def test_closed_form_payment_on_two_conflicting_owners(bid_only_params, make_owner):
    owners = [make_owner(0, bid=-2.0, channels={1}), make_owner(1, bid=-1.0, channels={1})]
    graph = ConflictGraph.from_owners(owners)
    payment, branch = closed_form_payment(owners, 0, q_scores(owners, bid_only_params, graph), graph,
                                          bid_only_params)
    assert payment == pytest.approx(-1.0, abs=1e-9)
    assert branch == "conflict"


def test_run_drla_outcomes(cfg, small_instances, linear_quality_params):
    assert run_drla([], cfg, linear_quality_params).winners == frozenset()
    mechanism = DrlaMechanism(cfg, linear_quality_params)
    for instance in small_instances:
        outcome = mechanism(instance.owners)
        assert ConflictGraph.from_owners(instance.owners).is_feasible(outcome.winners)
        assert mechanism.allocate(instance.owners) == outcome.winners
        for i in outcome.winners:
            assert outcome.payment(i) >= instance.owners[i].bid - 1e-9
        assert outcome.social_welfare == pytest.approx(
            mm.social_welfare(outcome.sorted_winners(), instance.owners, cfg))


def test_params_save_and_load(tmp_path, small_hyper):
    params = DrlaParams.initialize(small_hyper, seed=9)
    path = params.save(tmp_path / "drla.json")
    loaded = DrlaParams.load(path, hyper=small_hyper)
    assert loaded.hyper == small_hyper
    for name, value in params.arrays.items():
        assert np.array_equal(loaded.arrays[name], value)
    with pytest.raises(ParamsFormatError):
        DrlaParams.load(path, hyper=DrlaHyperParams(embedding_dim=5, monotone_groups=2, monotone_units=2))


def test_params_shape_validation(small_hyper):
    arrays = DrlaParams.initialize(small_hyper, seed=0).arrays
    arrays["q.phi2"] = np.zeros((3, 1))
    with pytest.raises(ParamsFormatError):
        DrlaParams(small_hyper, arrays)
    del arrays["q.phi2"]
    with pytest.raises(ParamsFormatError):
        DrlaParams(small_hyper, arrays)


@pytest.mark.slow
def test_monotone_network_on_ten_thousand_pairs():
    params = DrlaParams.initialize(DrlaHyperParams(), seed=11)
    rng = np.random.default_rng(11)
    data = rng.uniform(0.0, 10.0, 10_000)
    sigma = rng.uniform(0.0, 1.2, 10_000)
    base = monotonic_g(data, sigma, params)
    more_data = monotonic_g(data + rng.uniform(0.0, 5.0, 10_000), sigma, params)
    worse_emd = monotonic_g(data, sigma + rng.uniform(0.0, 0.6, 10_000), params)
    assert np.count_nonzero(more_data < base - 1e-12) == 0
    assert np.count_nonzero(worse_emd > base + 1e-12) == 0
