from dataclasses import replace

import numpy as np
import pytest

from compact.boost import (
    NO_REJECTION,
    Constant,
    PositiveRecall,
    TrainConfig,
    bootstrap_negatives,
    calibrate_threshold,
    embed_external_stage,
    fit_cascade,
    parse_policy,
    select_weak_learner,
    train_compact,
    training_lagrangian,
)
from compact.boost.selection import Candidate
from compact.cascade import Cascade, Stage, batch_metrics, evaluate_batch, predict, serialize
from compact.core import ConfigurationError, InvalidInputError, psi_weights
from compact.pool import learner_base_cost, synth_generate, synth_negative_pool
from compact.trees import Stump, fit_tree

from conftest import small_generator


def test_recall_one_keeps_all():
    t = calibrate_threshold(PositiveRecall(1.0), [-2.0, -1.0, 3.0])
    assert t == pytest.approx(2 + 1e-12, abs=1e-15)
    assert -2.0 + t > 0


def test_recall_fraction():
    rng = np.random.default_rng(0)
    s = np.sort(rng.normal(size=100))
    t = calibrate_threshold(PositiveRecall(0.9), s)
    assert np.sum(s + t > 0) >= 90


def test_constant_policy():
    assert calibrate_threshold(Constant(2.5), []) == 2.5


@pytest.mark.parametrize("q", [0.0, -0.1, 1.5])
def test_recall_bounds(q):
    with pytest.raises(InvalidInputError):
        PositiveRecall(q)


def test_recall_needs_positives():
    with pytest.raises(InvalidInputError):
        calibrate_threshold(PositiveRecall(1.0), [])


def test_parse_policy():
    assert parse_policy("recall:0.95") == PositiveRecall(0.95)
    assert parse_policy("constant:3") == Constant(3.0)
    with pytest.raises(ConfigurationError):
        parse_policy("median:1")


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(rounds=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(rounds=8, bootstrap_schedule=(4, 2))
    with pytest.raises(ConfigurationError):
        TrainConfig(rounds=8, bootstrap_schedule=(8,))
    with pytest.raises(ConfigurationError):
        TrainConfig(eta=-1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict({"rounds": 4, "colour": "red"})
    cfg = TrainConfig(rounds=4, eta=0.5, bootstrap_schedule=(2,), threshold_policy=Constant(1.0))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_single_label_training_set(small_data):
    with pytest.raises(ConfigurationError):
        fit_cascade(small_data.subset(small_data.labels == 1), TrainConfig(rounds=2))


def test_no_rejection_keeps_everyone(small_data):
    res = fit_cascade(small_data, TrainConfig(rounds=10, threshold_policy=NO_REJECTION))
    tr = evaluate_batch(res.cascade, small_data.X)
    assert tr.survived.all()
    assert all(r.n_active == len(small_data) for r in res.records)


def test_single_round_is_best_candidate(small_data):
    cfg = TrainConfig(rounds=1, depth=2, eta=0.3, subset_size=None)
    cascade = train_compact(small_data, cfg)
    assert len(cascade) == 1 and cascade.stages[0].threshold is None
    # refit one tree per family on the same data and pick by the selection score
    y = small_data.labels
    w = np.ones(len(y))
    m = small_data.manifest
    cands = []
    for fam in m.families:
        tree = fit_tree(small_data.X, y, w, 2, np.arange(fam.start, fam.end))
        costs = np.full(len(y), learner_base_cost(tree, m))
        if fam.trigger_group:
            costs += m.trigger_cost(fam.trigger_group)
        cands.append(Candidate(tree, tree.predict(small_data.X), costs, learner_base_cost(tree, m), fam.name))
    best = select_weak_learner(cands, y, w, np.ones(len(y), bool), psi_weights(cfg.loss, y), 0, cfg.eta)
    assert cascade.stages[0].learner == best.candidate.learner


def test_determinism(small_data):
    cfg = TrainConfig(rounds=12, eta=0.2, seed=5, subset_size=3)
    assert serialize(train_compact(small_data, cfg)) == serialize(train_compact(small_data, cfg))


def test_threads_do_not_change_the_model(small_data):
    cfg = TrainConfig(rounds=8, eta=0.2, seed=1, subset_size=3)
    one = train_compact(small_data, cfg)
    four = train_compact(small_data, TrainConfig(rounds=8, eta=0.2, seed=1, subset_size=3, threads=4))
    assert serialize(one) == serialize(four)


def test_trace_invariants(small_data):
    pool = synth_negative_pool(small_generator(), 400, 9, "p")
    cfg = TrainConfig(rounds=24, eta=0.5, threshold_policy=Constant(1.0), bootstrap_schedule=(8, 16))
    res = fit_cascade(small_data, cfg, negative_pool=pool)
    recs = res.records
    assert [r.round for r in recs] == list(range(1, 25))
    assert recs[-1].threshold is None
    for prev, cur in zip(recs, recs[1:]):
        if not cur.bootstrapped:
            assert cur.n_active <= prev.n_active
            assert cur.pressure_bound <= prev.pressure_bound
    assert [r.round for r in recs if r.bootstrapped] == [9, 17]
    # bootstrapping replaces negatives only
    assert res.final_train.n_pos == small_data.n_pos
    assert res.final_train.n_neg == small_data.n_neg


def test_larger_eta_prefers_cheaper_stages(small_data):
    costs = []
    for eta in (0.0, 5.0):
        c = train_compact(small_data, TrainConfig(rounds=16, eta=eta, threshold_policy=Constant(1.0)))
        costs.append(batch_metrics(c, small_data, roc=False)["total_omega_neg"]["mean"])
    assert costs[1] < costs[0]


# -- bootstrapping -----------------------------------------------------------


def _stump_cascade(manifest, alphas, thresholds, features):
    stages = tuple(Stage(Stump(f, 0.0, 1).to_tree(), a, t) for f, a, t in zip(features, alphas, thresholds))
    return Cascade(stages, manifest)


def test_bootstrap_top_k(small_data):
    pool = synth_negative_pool(small_generator(), 10, 2, "p")
    cascade = _stump_cascade(pool.manifest, [0.5, 0.3, 0.2], [1e6, 1e6, None], [0, 1, 2])
    mined, shortfall = bootstrap_negatives(cascade, pool, 5)
    assert shortfall == 0
    scores = evaluate_batch(cascade, pool.X).final_score
    expected = sorted(range(10), key=lambda i: (-scores[i], i))[:5]
    assert mined.ids == tuple(pool.ids[i] for i in expected)


def test_bootstrap_all_rejected(small_data):
    pool = synth_negative_pool(small_generator(), 10, 2, "p")
    cascade = _stump_cascade(pool.manifest, [1.0, 1.0], [-5.0, None], [0, 1])
    mined, shortfall = bootstrap_negatives(cascade, pool, 4)
    assert mined is None and shortfall == 4


def test_bootstrap_lowers_lagrangian():
    gen = small_generator(n_pos=200, n_neg=200)
    data = synth_generate(gen, 21)
    pool = synth_negative_pool(gen, 3000, 22, "p")
    cfg = TrainConfig(rounds=32, eta=0.1, threshold_policy=Constant(2.0))
    booted = fit_cascade(data, replace(cfg, bootstrap_schedule=(8, 16, 24)), negative_pool=pool)
    plain = fit_cascade(data, cfg)
    final = booted.final_train
    assert training_lagrangian(booted.cascade, final, cfg.eta) <= training_lagrangian(plain.cascade, final, cfg.eta)


# -- external stage ----------------------------------------------------------


@pytest.fixture(scope="module")
def gated_model():
    data = synth_generate(small_generator(n_pos=300, n_neg=300), 13)
    cascade = train_compact(data, TrainConfig(rounds=8, eta=0.1, threshold_policy=Constant(1.0)))
    return cascade, data


def test_zero_scores_change_nothing(gated_model):
    cascade, data = gated_model
    emb = embed_external_stage(cascade, {i: 0.0 for i in data.ids}, data)
    assert emb.stages[-1].alpha == 0.0
    ext = np.zeros(len(data))
    assert np.array_equal(predict(emb, data.X, ext), predict(cascade, data.X))


def test_oracle_scores_do_not_hurt(gated_model):
    cascade, data = gated_model
    scores = {i: 10.0 * int(y) for i, y in zip(data.ids, data.labels)}
    emb = embed_external_stage(cascade, scores, data)
    ext = np.array([scores[i] for i in data.ids])
    after = batch_metrics(emb, data, ext, roc=False)["error"]
    before = batch_metrics(cascade, data, roc=False)["error"]
    assert emb.stages[-1].alpha > 0
    assert after <= before


def test_noise_scores_get_small_alpha():
    data = synth_generate(small_generator(n_pos=1000, n_neg=1000), 14)
    cascade = train_compact(data, TrainConfig(rounds=4, threshold_policy=NO_REJECTION))
    rng = np.random.default_rng(0)
    scores = {i: float(v) for i, v in zip(data.ids, rng.standard_normal(len(data)))}
    emb = embed_external_stage(cascade, scores, data)
    assert abs(emb.stages[-1].alpha) < 0.05


def test_missing_scores_are_listed(gated_model):
    cascade, data = gated_model
    scores = {i: 1.0 for i in data.ids[3:]}
    with pytest.raises(InvalidInputError) as err:
        embed_external_stage(cascade, scores, data)
    assert data.ids[0] in str(err.value)


def test_embed_twice_is_rejected(gated_model):
    cascade, data = gated_model
    emb = embed_external_stage(cascade, {i: 0.0 for i in data.ids}, data)
    with pytest.raises(InvalidInputError):
        embed_external_stage(emb, {i: 0.0 for i in data.ids}, data)
