"""Binary weak learners: decision stumps and shallow decision trees.

Both route an example right when ``x[feature] >= threshold``. Outputs are
always -1 or +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InvalidInputError, as_labels


@dataclass(frozen=True)
class Stump:
    feature_id: int
    threshold: float
    polarity: int

    def __post_init__(self):
        if self.polarity not in (-1, 1):
            raise InvalidInputError(f"polarity must be -1 or +1, got {self.polarity!r}")

    def features(self) -> tuple[int, ...]:
        return (self.feature_id,)

    def predict_one(self, x) -> int:
        return self.polarity if x[self.feature_id] >= self.threshold else -self.polarity

    def predict(self, X: np.ndarray) -> np.ndarray:
        right = X[:, self.feature_id] >= self.threshold
        return np.where(right, self.polarity, -self.polarity).astype(np.int8)

    def to_tree(self) -> "Tree":
        return Tree((
            Node(feature=self.feature_id, threshold=self.threshold, left=1, right=2),
            Node(value=-self.polarity),
            Node(value=self.polarity),
        ))


@dataclass(frozen=True)
class Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; node 0 is the root."""

    nodes: tuple[Node, ...]

    def __post_init__(self):
        if not self.nodes:
            raise InvalidInputError("tree has no nodes")
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.is_leaf:
                if node.value not in (-1, 1):
                    raise InvalidInputError(f"nodes[{i}]: leaf value must be -1 or +1")
            elif not (i < node.left < n and i < node.right < n):
                raise InvalidInputError(f"nodes[{i}]: child index out of range")
        # flat arrays for vectorized prediction
        object.__setattr__(self, "_feat", np.array([max(nd.feature, 0) for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_thr", np.array([nd.threshold for nd in self.nodes], dtype=float))
        object.__setattr__(self, "_left", np.array([nd.left for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_right", np.array([nd.right for nd in self.nodes], dtype=np.int64))
        object.__setattr__(self, "_value", np.array([nd.value for nd in self.nodes], dtype=np.int8))

    @property
    def depth(self) -> int:
        def walk(i: int) -> int:
            nd = self.nodes[i]
            return 0 if nd.is_leaf else 1 + max(walk(nd.left), walk(nd.right))
        return walk(0)

    def features(self) -> tuple[int, ...]:
        return tuple(sorted({nd.feature for nd in self.nodes if not nd.is_leaf}))

    def predict_one(self, x) -> int:
        nd = self.nodes[0]
        while not nd.is_leaf:
            nd = self.nodes[nd.right if x[nd.feature] >= nd.threshold else nd.left]
        return nd.value

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(len(self.nodes)):
            inner = self._left[idx] >= 0
            if not inner.any():
                break
            go_right = X[rows, self._feat[idx]] >= self._thr[idx]
            idx = np.where(inner, np.where(go_right, self._right[idx], self._left[idx]), idx)
        return self._value[idx]


# -- fitting -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Presorted:
    """Per-column row order of a design matrix and the sorted values.

    Build once with :func:`presort` and reuse across :func:`fit_tree` calls.
    """

    order: np.ndarray  # (n, d) row indices
    values: np.ndarray  # (n, d) column values in that order


def presort(X: np.ndarray) -> Presorted:
    X = np.asarray(X, dtype=float)
    order = np.argsort(X, axis=0, kind="stable")
    return Presorted(order, np.take_along_axis(X, order, axis=0))


def _sorted_columns(X, yw, rows, feats, pre):
    """Column values and label weights of ``rows`` x ``feats``, each column sorted."""
    if pre is None:
        V = X[np.ix_(rows, feats)]
        o = np.argsort(V, axis=0, kind="stable")
        return np.take_along_axis(V, o, axis=0), yw[rows][o]
    o = pre.order[:, feats]
    if len(rows) == X.shape[0]:
        return pre.values[:, feats], yw[o]
    mask = np.zeros(X.shape[0], dtype=bool)
    mask[rows] = True
    oT = o.T
    keep = mask[oT]
    shape = (len(feats), len(rows))
    return pre.values[:, feats].T[keep].reshape(shape).T, yw[oT[keep].reshape(shape)].T


def _scan(Vs: np.ndarray, yws: np.ndarray):
    """Score every threshold of every presorted column of ``Vs``.

    Thresholds per column are ordered -inf, midpoints of distinct sorted values
    ascending, +inf. Returns (thresholds, left_sums, valid, total) with shapes
    (n+1, k), (n+1, k), (n+1, k), (k,).
    """
    n, k = Vs.shape
    cs = np.cumsum(yws, axis=0)
    total = cs[-1]
    left = np.empty((n + 1, k))
    left[0] = 0.0
    left[1:n] = cs[:-1]
    left[n] = total
    valid = np.ones((n + 1, k), dtype=bool)
    thr = np.empty((n + 1, k))
    thr[0] = -np.inf
    thr[n] = np.inf
    if n > 1:
        lo, hi = Vs[:-1], Vs[1:]
        valid[1:n] = lo < hi
        mid = lo + (hi - lo) / 2.0
        # adjacent floats: the midpoint may round onto the lower value
        thr[1:n] = np.where(mid > lo, mid, hi)
    return thr, left, valid, total


def _best_stumps(Vs: np.ndarray, yws: np.ndarray):
    """Per-column best stump: (edge, threshold, polarity) arrays of length k."""
    thr, left, valid, total = _scan(Vs, yws)
    plus = total[None, :] - 2.0 * left
    E = np.stack([plus, -plus], axis=1)  # (n+1, 2, k): polarity +1 then -1
    E[~np.repeat(valid[:, None, :], 2, axis=1)] = -np.inf
    flat = E.reshape(-1, E.shape[2])
    pick = np.argmax(flat, axis=0)
    cols = np.arange(Vs.shape[1])
    pos, pol = np.divmod(pick, 2)
    return flat[pick, cols], thr[pos, cols], np.where(pol == 0, 1, -1)


def _best_split(Vs: np.ndarray, yws: np.ndarray):
    """Per-column best non-degenerate split under the locally best labeling
    (each side takes the sign of its weighted label sum): maximizes
    |S_left| + |S_right|. Columns without a split get score -inf."""
    thr, left, valid, total = _scan(Vs, yws)
    n = Vs.shape[0]
    score = np.abs(left) + np.abs(total[None, :] - left)
    score[0] = -np.inf
    score[n] = -np.inf
    score[~valid] = -np.inf
    pick = np.argmax(score, axis=0)
    cols = np.arange(Vs.shape[1])
    return score[pick, cols], thr[pick, cols]


def _weighted(labels, weights) -> np.ndarray:
    y = as_labels(labels).astype(float)
    w = np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise InvalidInputError(f"length mismatch: labels {y.shape} vs weights {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite and non-negative")
    s = w.sum()
    # rescaling leaves every argmax below unchanged
    return y * (w / s if s > 0 else w)


def fit_stump(values: Sequence[float], labels, weights, feature_id: int = 0) -> Stump:
    """Stump maximizing the weighted edge sum(y * w * g).

    Ties go to the lowest threshold, then to polarity +1.
    """
    v = np.asarray(values, dtype=float)
    yw = _weighted(labels, weights)
    if v.shape != yw.shape:
        raise InvalidInputError(f"length mismatch: values {v.shape} vs labels {yw.shape}")
    if v.size == 0:
        raise InvalidInputError("empty input")
    o = np.argsort(v, kind="stable")
    _, thr, pol = _best_stumps(v[o][:, None], yw[o][:, None])
    return Stump(feature_id, float(thr[0]), int(pol[0]))


def best_stump(X: np.ndarray, labels, weights, features: Sequence[int] | None = None) -> tuple[Stump, float]:
    """Best stump over the given columns; ties to the lowest feature id."""
    feats = np.arange(X.shape[1]) if features is None else np.asarray(features)
    yw = _weighted(labels, weights)
    V = np.asarray(X, dtype=float)[:, feats]
    o = np.argsort(V, axis=0, kind="stable")
    edge, thr, pol = _best_stumps(np.take_along_axis(V, o, axis=0), yw[o])
    j = int(np.argmax(edge))
    return Stump(int(feats[j]), float(thr[j]), int(pol[j])), float(edge[j])


def fit_tree(
    X: np.ndarray,
    labels,
    weights,
    depth: int,
    features: Sequence[int] | None = None,
    presorted: Presorted | None = None,
) -> Tree:
    """Greedy top-down tree of at most ``depth`` levels.

    Internal levels pick the non-degenerate split that maximizes the edge of
    the locally best labeling; the bottom level is a weighted-edge stump, so
    ``depth=1`` is exactly :func:`best_stump`. A node whose examples share all
    feature values is closed with a stump. ``presorted`` is an optional
    :func:`presort` of ``X``.
    """
    if depth < 1:
        raise InvalidInputError("depth must be at least 1")
    X = np.asarray(X, dtype=float)
    feats = np.arange(X.shape[1]) if features is None else np.sort(np.asarray(features, dtype=np.int64))
    if feats.size == 0:
        raise InvalidInputError("no candidate features")
    yw = _weighted(labels, weights)
    if yw.shape[0] != X.shape[0]:
        raise InvalidInputError("length mismatch between X and labels")
    if presorted is not None and presorted.order.shape != X.shape:
        raise InvalidInputError("presorted order does not match X")
    nodes: list[Node | None] = []

    def close_with_stump(rows: np.ndarray) -> int:
        edge, thr, pol = _best_stumps(*_sorted_columns(X, yw, rows, feats, presorted))
        j = int(np.argmax(edge))
        at = len(nodes)
        nodes.append(Node(feature=int(feats[j]), threshold=float(thr[j]), left=at + 1, right=at + 2))
        nodes.append(Node(value=-int(pol[j])))
        nodes.append(Node(value=int(pol[j])))
        return at

    def grow(rows: np.ndarray, d: int) -> int:
        if d == 1:
            return close_with_stump(rows)
        score, thr = _best_split(*_sorted_columns(X, yw, rows, feats, presorted))
        j = int(np.argmax(score))
        if not np.isfinite(score[j]):
            return close_with_stump(rows)
        f, t = int(feats[j]), float(thr[j])
        at = len(nodes)
        nodes.append(None)
        go_right = X[rows, f] >= t
        left = grow(rows[~go_right], d - 1)
        right = grow(rows[go_right], d - 1)
        nodes[at] = Node(feature=f, threshold=t, left=left, right=right)
        return at

    grow(np.arange(X.shape[0]), depth)
    return Tree(tuple(nodes))


def weighted_edge(labels, weights, outputs) -> float:
    y = as_labels(labels)
    return float(np.dot(y * np.asarray(weights, dtype=float), np.asarray(outputs, dtype=float)))

