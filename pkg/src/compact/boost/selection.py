"""Weak-learner selection score and step sizes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..core import ConfigurationError, InvalidInputError, NonUniformCostError, as_labels

ALPHA_EPS = 1e-10
ALPHA_MAX = 0.5 * math.log(1e12)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _same_length(**arrays) -> int:
    sizes = {k: np.shape(v)[0] for k, v in arrays.items()}
    if len(set(sizes.values())) != 1:
        raise InvalidInputError(f"length mismatch: {sizes}")
    n = next(iter(sizes.values()))
    if n == 0:
        raise InvalidInputError("empty input")
    return n


def score_direction(g, labels, weights, active, psi, g_costs, m: int, eta: float) -> float:
    """Steepest-descent score of the Lagrangian along ``g``.

    D[g] = 1/N * sum_i y_i * (w_i g_i + eta * r_i * psi_i * cost_i / (m + 1))
    """
    n = _same_length(g=g, labels=labels, weights=weights, active=active, psi=psi, g_costs=g_costs)
    if m < 0:
        raise InvalidInputError("cascade length m must be non-negative")
    y = as_labels(labels).astype(float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(weights, dtype=float)
    r = np.asarray(active, dtype=bool)
    classification = float(np.dot(y * w, g))
    cost_term = float(np.sum((y * np.asarray(psi, dtype=float) * np.asarray(g_costs, dtype=float))[r]))
    return (classification + eta * cost_term / (m + 1)) / n


def uniform_active_cost(g_costs, active) -> float:
    """The learner's cost if it is the same for every active example."""
    c = np.asarray(g_costs, dtype=float)
    r = np.asarray(active, dtype=bool)
    if c.shape != r.shape:
        raise InvalidInputError(f"length mismatch: costs {c.shape} vs active {r.shape}")
    live = c[r]
    if live.size == 0:
        return float(c.max()) if c.size else 0.0
    if np.any(live != live[0]):
        raise NonUniformCostError(
            f"learner cost varies across active examples ({live.min()}..{live.max()})"
        )
    return float(live[0])


def score_direction_fast(
    edge: float,
    g_cost,
    active_neg_fraction: float,
    m: int,
    eta: float,
    n_total: int,
    active=None,
) -> float:
    """Selection score for a learner whose cost does not depend on the example.

    ``edge`` is the unnormalized sum(y * w * g); ``active_neg_fraction`` is the
    number of active negatives divided by ``n_total``. Under the hinge
    complexity loss only active negatives carry complexity weight.

    ``g_cost`` may be a per-example array, in which case ``active`` is required
    and :class:`NonUniformCostError` is raised unless the cost is uniform over
    the active examples.
    """
    if np.ndim(g_cost) > 0:
        if active is None:
            raise InvalidInputError("per-example costs need the active mask")
        g_cost = uniform_active_cost(g_cost, active)
    if n_total <= 0:
        raise InvalidInputError("n_total must be positive")
    return edge / n_total - eta / (m + 1) * active_neg_fraction * g_cost


@dataclass(frozen=True, eq=False)
class Candidate:
    """A fitted learner plus what selection needs to know about it."""

    learner: object
    outputs: np.ndarray  # g(x_i) for every training example
    costs: np.ndarray  # cost charged at each example given its trigger state
    base_cost: float
    family: str = ""

    @property
    def lowest_feature(self) -> int:
        feats = self.learner.features()
        return min(feats) if feats else -1


@dataclass(frozen=True)
class Scored:
    candidate: Candidate
    score: float
    classification: float  # edge / N
    complexity: float  # D - edge / N
    fast_path: bool


def score_candidate(cand: Candidate, labels, weights, active, psi, m: int, eta: float) -> Scored:
    y = as_labels(labels)
    n = y.shape[0]
    edge = float(np.dot(y * np.asarray(weights, dtype=float), cand.outputs.astype(float)))
    try:
        cost = uniform_active_cost(cand.costs, active)
    except NonUniformCostError:
        d = score_direction(cand.outputs, y, weights, active, psi, cand.costs, m, eta)
        return Scored(cand, d, edge / n, d - edge / n, False)
    r = np.asarray(active, dtype=bool)
    psi = np.asarray(psi, dtype=float)
    # xi * |S_a|: with hinge psi this is the number of active negatives
    xi_active = -float(np.sum(psi[r] * y[r]))
    d = score_direction_fast(edge, cost, xi_active / n, m, eta, n)
    return Scored(cand, d, edge / n, d - edge / n, True)


def select_weak_learner(
    candidates: Iterable[Candidate], labels, weights, active, psi, m: int, eta: float
) -> Scored:
    """Argmax of D over the candidates.

    Ties go to the smaller base cost, then to the smaller lowest feature id.
    """
    best: Scored | None = None
    for cand in candidates:
        s = score_candidate(cand, labels, weights, active, psi, m, eta)
        if best is None or _beats(s, best):
            best = s
    if best is None:
        raise ConfigurationError("empty weak-learner pool")
    return best


def _beats(a: Scored, b: Scored) -> bool:
    if a.score != b.score:
        return a.score > b.score
    if a.candidate.base_cost != b.candidate.base_cost:
        return a.candidate.base_cost < b.candidate.base_cost
    return a.candidate.lowest_feature < b.candidate.lowest_feature


def closed_form_alpha(labels, weights, g) -> float:
    """AdaBoost step 1/2 log(W_correct / W_wrong), smoothed and clamped."""
    _same_length(labels=labels, weights=weights, g=g)
    y = as_labels(labels)
    g = np.asarray(g)
    if not np.all((g == 1) | (g == -1)):
        raise InvalidInputError("closed-form step needs binary outputs")
    w = np.asarray(weights, dtype=float)
    right = float(np.sum(w[y == g]))
    wrong = float(np.sum(w[y != g]))
    alpha = 0.5 * math.log((right + ALPHA_EPS) / (wrong + ALPHA_EPS))
    return min(max(alpha, -ALPHA_MAX), ALPHA_MAX)


def _log_risk(y: np.ndarray, scores: np.ndarray, g: np.ndarray, alpha: float) -> float:
    z = -y * (scores + alpha * g)
    top = float(np.max(z))
    return top + math.log(float(np.sum(np.exp(z - top))))


def line_search_alpha(
    labels,
    scores,
    g,
    eta: float = 0.0,
    complexity_term: float = 0.0,
    *,
    hi: float = ALPHA_MAX,
    tol: float = 1e-8,
) -> float:
    """Golden-section minimization of the empirical risk of F + alpha*g on [0, hi].

    The complexity part of the Lagrangian does not change with alpha for a
    fixed learner, so ``eta`` and ``complexity_term`` only shift the objective.
    The risk is minimized in log space to survive large real-valued outputs.
    """
    _same_length(labels=labels, scores=scores, g=g)
    y = as_labels(labels).astype(float)
    f = np.asarray(scores, dtype=float)
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return 0.0
    a, b = 0.0, float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = _log_risk(y, f, g, c)
    fd = _log_risk(y, f, g, d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = _log_risk(y, f, g, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = _log_risk(y, f, g, d)
    return 0.5 * (a + b)


def lagrangian_along(labels, scores, g, alpha: float, eta: float, complexity_term: float) -> float:
    """Objective of the line search in natural units (mean risk + eta * R_C)."""
    y = as_labels(labels).astype(float)
    z = -y * (np.asarray(scores, dtype=float) + alpha * np.asarray(g, dtype=float))
    return float(np.mean(np.exp(z))) + eta * complexity_term

