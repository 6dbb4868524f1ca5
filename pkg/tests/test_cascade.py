import json

import numpy as np
import pytest

from compact.cascade import (
    Cascade,
    ExternalStage,
    Stage,
    batch_metrics,
    deserialize,
    evaluate,
    evaluate_batch,
    rejection_indicator,
    serialize,
    to_document,
)
from compact.core import InvalidInputError, SchemaError
from compact.pool import Dataset
from compact.trees import Stump

from conftest import random_cascade
from oracles import full_evaluation_average_omega, threaded_total_omega


def stump_stage(feature, alpha, threshold, polarity=1):
    return Stage(Stump(feature, 0.0, polarity).to_tree(), alpha, threshold)


def test_rejection_indicator_examples(plain_manifest):
    c = Cascade((stump_stage(0, 1.0, 0.0), stump_stage(1, 1.0, 0.5), stump_stage(2, 1.0, None)), plain_manifest)
    assert rejection_indicator(c, [5.0, 5.0, 5.0], 1)
    # F_1 + T_1 = 0 exactly rejects
    assert not rejection_indicator(c, [0.0, 5.0, 5.0], 2)
    assert rejection_indicator(c, [0.1, 5.0, 5.0], 2)
    assert not rejection_indicator(c, [0.1, -0.5, 5.0], 3)
    with pytest.raises(InvalidInputError):
        rejection_indicator(c, [0.0] * 3, 5)


def test_rejection_indicator_matches_product(plain_manifest):
    rng = np.random.default_rng(0)
    c = random_cascade(rng, plain_manifest, 5)
    for _ in range(20):
        partial = rng.normal(size=5)
        for k in range(1, 7):
            prod = 1
            for j in range(k - 1):
                t = c.stages[j].threshold
                prod *= 1 if t is None else int(partial[j] + t > 0)
            assert rejection_indicator(c, partial, k) == bool(prod)


def test_two_stage_costs(plain_manifest):
    # stage 1 reads family a (cost 1), stage 2 family c (cost 4)
    c = Cascade((stump_stage(0, 1.0, 0.5), stump_stage(10, 1.0, None)), plain_manifest)
    x = np.zeros(20)
    x[0] = -1.0  # stage 1 outputs -1: F + T = -0.5, rejected
    tr = evaluate(c, x)
    assert (tr.total_omega, tr.average_omega, tr.rejected_at, tr.survived) == (1.0, 0.5, 1, False)
    x[0] = 1.0
    tr = evaluate(c, x)
    assert (tr.total_omega, tr.average_omega, tr.rejected_at, tr.survived) == (5.0, 2.5, None, True)


def test_trigger_charged_once(manifest):
    stages = (
        stump_stage(0, 0.1, 10.0),
        stump_stage(5, 0.1, 10.0),
        stump_stage(20, 0.1, 10.0),
        stump_stage(21, 0.1, None),
    )
    c = Cascade(stages, manifest)
    tr = evaluate(c, np.zeros(24))
    assert tr.stage_costs == (1.0, 2.0, 51.0, 1.0)
    assert tr.total_omega == 55.0


def test_batch_matches_single(manifest):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 24))
    for _ in range(10):
        c = random_cascade(rng, manifest, 6)
        tr = evaluate_batch(c, X)
        for i, x in enumerate(X):
            one = evaluate(c, x)
            assert tr.final_score[i] == one.final_score
            assert tr.total_omega[i] == one.total_omega
            assert tr.average_omega[i] == one.average_omega
            assert tr.rejected_at[i] == (one.rejected_at or 0)


def test_early_exit_equals_full_evaluation(plain_manifest):
    rng = np.random.default_rng(2)
    doc = plain_manifest.to_document()
    X = rng.normal(size=(100, 20))
    for _ in range(10):
        c = random_cascade(rng, plain_manifest, 7)
        tr = evaluate_batch(c, X)
        expected = [full_evaluation_average_omega(c, doc, x) for x in X]
        assert list(tr.average_omega) == expected


def test_threaded_trigger_state(manifest):
    rng = np.random.default_rng(3)
    doc = manifest.to_document()
    X = rng.normal(size=(100, 24))
    for _ in range(10):
        c = random_cascade(rng, manifest, 7, features=[0, 5, 10, 20, 21, 22])
        tr = evaluate_batch(c, X)
        assert list(tr.total_omega) == [threaded_total_omega(c, doc, x) for x in X]


def test_survivors_pay_at_least_rejected(manifest):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 24))
    c = random_cascade(rng, manifest, 8)
    tr = evaluate_batch(c, X)
    full = sum(c.stage_base_costs) + sum(manifest.trigger_cost(g) for g in set().union(*c.stage_groups))
    assert np.all(tr.total_omega[tr.survived] == full)
    assert np.all(tr.total_omega <= full)
    assert np.all(tr.average_omega <= full / len(c))


def test_dimension_mismatch(plain_manifest):
    c = Cascade((stump_stage(0, 1.0, None),), plain_manifest)
    with pytest.raises(InvalidInputError):
        evaluate(c, np.zeros(3))
    with pytest.raises(InvalidInputError):
        evaluate_batch(c, np.zeros((2, 3)))


def test_cascade_validation(plain_manifest):
    with pytest.raises(InvalidInputError):
        Cascade((), plain_manifest)
    with pytest.raises(InvalidInputError):
        Cascade((stump_stage(0, 1.0, None), stump_stage(1, 1.0, None)), plain_manifest)
    with pytest.raises(InvalidInputError):
        Cascade((Stage(ExternalStage(), 1.0, None), stump_stage(1, 1.0, None)), plain_manifest)


def test_external_stage_needs_score(plain_manifest):
    c = Cascade((stump_stage(0, 1.0, 5.0), Stage(ExternalStage(), 0.5, None)), plain_manifest)
    with pytest.raises(InvalidInputError):
        evaluate(c, np.zeros(20))
    tr = evaluate(c, np.zeros(20), external_score=-4.0)
    assert tr.final_score == 1.0 - 2.0
    assert tr.stage_costs == (1.0, 0.0)


def _dataset(manifest, labels, rng):
    y = np.array(labels)
    return Dataset(tuple(f"e{i}" for i in range(len(y))), y, rng.normal(size=(len(y), manifest.total_features)), manifest)


def test_metrics_constant_positive(plain_manifest):
    rng = np.random.default_rng(5)
    # both branches output +1, so every example scores +alpha
    always = Stage(Stump(0, -np.inf, 1).to_tree(), 0.7, None)
    c = Cascade((always,), plain_manifest)
    d = _dataset(plain_manifest, [1, -1, -1, 1, -1], rng)
    m = batch_metrics(c, d)
    assert m["error"] == pytest.approx(3 / 5)
    assert m["fpr"] == 1.0 and m["fnr"] == 0.0


def test_metrics_without_negatives(plain_manifest):
    rng = np.random.default_rng(6)
    c = random_cascade(rng, plain_manifest, 3)
    m = batch_metrics(c, _dataset(plain_manifest, [1, 1, 1], rng))
    assert m["fpr"] is None and m["total_omega_neg"] is None


def test_metrics_mean_average_omega(plain_manifest):
    rng = np.random.default_rng(7)
    c = random_cascade(rng, plain_manifest, 6)
    d = _dataset(plain_manifest, list(rng.choice([-1, 1], 50)), rng)
    expected = sum(evaluate(c, ex).average_omega for ex in d) / len(d)
    assert batch_metrics(c, d)["mean_average_omega"] == pytest.approx(expected, rel=1e-12)


def test_round_trip_is_byte_identical(manifest):
    rng = np.random.default_rng(8)
    c = random_cascade(rng, manifest, 64)
    blob = serialize(c)
    back = deserialize(blob)
    assert serialize(back) == blob
    X = rng.normal(size=(500, 24))
    assert np.array_equal(evaluate_batch(c, X).final_score, evaluate_batch(back, X).final_score)


def test_infinite_node_thresholds_round_trip(plain_manifest):
    c = Cascade((Stage(Stump(0, -np.inf, 1).to_tree(), 1.0, None),), plain_manifest)
    assert deserialize(serialize(c)).stages[0].learner == c.stages[0].learner


def test_external_stage_round_trip(plain_manifest):
    c = Cascade((stump_stage(0, 1.0, 0.5), Stage(ExternalStage(), 0.25, None)), plain_manifest, {"external_alpha": 0.25})
    assert serialize(deserialize(serialize(c))) == serialize(c)


def test_tampered_threshold(manifest):
    rng = np.random.default_rng(9)
    doc = to_document(random_cascade(rng, manifest, 4))
    doc["stages"][2]["threshold"] = "high"
    with pytest.raises(SchemaError) as err:
        deserialize(json.dumps(doc))
    assert err.value.path == "stages[2].threshold"


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d.update(version=99), "version"),
    (lambda d: d["stages"][0].update(kind="forest"), "stages[0].kind"),
    (lambda d: d["stages"][1]["nodes"][0].update(left="x"), "stages[1].nodes[0].left"),
    (lambda d: d["stages"][0].update(threshold=None), "stages[0].threshold"),
    (lambda d: d.pop("manifest"), "manifest"),
])
def test_schema_errors(manifest, mutate, path):
    rng = np.random.default_rng(10)
    doc = to_document(random_cascade(rng, manifest, 3))
    mutate(doc)
    with pytest.raises(SchemaError) as err:
        deserialize(doc)
    assert err.value.path == path


def test_not_json():
    with pytest.raises(SchemaError):
        deserialize(b"{not json")
