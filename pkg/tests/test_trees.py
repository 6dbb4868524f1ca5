import math

import numpy as np
import pytest

from compact.core import InvalidInputError
from compact.trees import best_stump, fit_stump, fit_tree, presort, weighted_edge

from oracles import brute_force_stump


def test_separable_stump():
    s = fit_stump([1, 2, 3, 4], [1, 1, -1, -1], [1, 1, 1, 1])
    assert (s.threshold, s.polarity) == (2.5, -1)
    assert weighted_edge([1, 1, -1, -1], [0.25] * 4, s.predict(np.array([[1], [2], [3], [4]]))) == 1.0


def test_mirror_stump():
    s = fit_stump([1, 2, 3, 4], [-1, -1, 1, 1], [1, 1, 1, 1])
    assert (s.threshold, s.polarity) == (2.5, 1)


def test_stump_length_mismatch():
    with pytest.raises(InvalidInputError):
        fit_stump([1, 2, 3], [1, -1], [1, 1])


@pytest.mark.parametrize("seed", [3, 4, 5, 6, 7])
def test_stump_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=8)
    y = rng.choice([-1, 1], size=8)
    w = rng.uniform(0.1, 1.0, size=8)
    s = fit_stump(v, y, w)
    edge, t, p = brute_force_stump(list(v), list(y), list(w))
    assert (s.threshold, s.polarity) == (t, p)
    assert weighted_edge(y, w, s.predict(v[:, None])) == pytest.approx(edge, rel=1e-12)


def test_stump_with_ties_in_values():
    v = [1.0, 1.0, 2.0, 2.0, 3.0]
    y = [1, -1, -1, -1, 1]
    w = [1.0, 1.0, 2.0, 1.0, 1.0]
    s = fit_stump(v, y, w)
    _, t, p = brute_force_stump(v, y, w)
    assert (s.threshold, s.polarity) == (t, p)


def test_xor_depth_two():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 3, dtype=float)
    y = np.where(X[:, 0] != X[:, 1], 1, -1)
    w = np.ones(len(y)) / len(y)
    tree = fit_tree(X, y, w, 2)
    assert weighted_edge(y, w, tree.predict(X)) == pytest.approx(1.0)


def test_depth_one_is_best_stump():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    y = rng.choice([-1, 1], size=30)
    w = rng.uniform(size=30)
    tree = fit_tree(X, y, w, 1)
    stumps = [fit_stump(X[:, j], y, w, j) for j in range(2)]
    edges = [weighted_edge(y, w, s.predict(X)) for s in stumps]
    best = stumps[int(np.argmax(edges))]
    assert tree == best.to_tree()
    s, _ = best_stump(X, y, w)
    assert s == best


def test_depth_two_beats_every_stump():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(12, 3))
    y = rng.choice([-1, 1], size=12)
    w = rng.uniform(0.1, 1, size=12)
    tree = fit_tree(X, y, w, 2)
    tree_edge = weighted_edge(y, w, tree.predict(X))
    for j in range(3):
        for t in [-math.inf, *np.sort(X[:, j]), math.inf]:
            for p in (1, -1):
                g = np.where(X[:, j] >= t, p, -p)
                assert tree_edge >= weighted_edge(y, w, g) - 1e-12


def test_presorted_matches_unsorted():
    rng = np.random.default_rng(9)
    X = np.round(rng.normal(size=(80, 6)), 1)  # rounding forces ties
    y = rng.choice([-1, 1], size=80)
    w = rng.uniform(size=80)
    pre = presort(X)
    for depth in (1, 2, 3):
        for feats in (None, [1, 4], [5]):
            assert fit_tree(X, y, w, depth, feats, pre) == fit_tree(X, y, w, depth, feats)


def test_tree_only_reads_given_features():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 6))
    y = rng.choice([-1, 1], size=50)
    tree = fit_tree(X, y, np.ones(50), 2, [2, 3])
    assert set(tree.features()) <= {2, 3}


def test_predict_one_matches_predict():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 4))
    y = rng.choice([-1, 1], size=40)
    tree = fit_tree(X, y, np.ones(40), 3)
    assert [tree.predict_one(x) for x in X] == list(tree.predict(X))


def test_constant_features_close_with_stump():
    X = np.ones((6, 2))
    y = np.array([1, -1, 1, 1, -1, 1])
    tree = fit_tree(X, y, np.ones(6), 2)
    assert np.all(tree.predict(X) == 1)
