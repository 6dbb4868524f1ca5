"""Complexity-aware cascade boosting."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..cascade import Cascade, ExternalStage, Stage, evaluate_batch
from ..core import (
    ComplexityLoss,
    ConfigurationError,
    InvalidInputError,
    LagrangianConfig,
    complexity_risk,
    empirical_risk,
    lagrangian,
    psi_weights,
)
from ..pool import Dataset, FamilyManifest, learner_base_cost, learner_trigger_groups, require_labels_present, stratified_subsets
from ..trees import Tree, fit_tree, presort
from .selection import Candidate, Scored, closed_form_alpha, line_search_alpha, select_weak_learner

log = logging.getLogger(__name__)

RECALL_EPS = 1e-12


# -- thresholds --------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    theta: float

    def __str__(self) -> str:
        return f"constant:{self.theta!r}"


@dataclass(frozen=True)
class PositiveRecall:
    q: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise InvalidInputError(f"recall target must lie in (0, 1], got {self.q!r}")

    def __str__(self) -> str:
        return f"recall:{self.q!r}"


ThresholdPolicy = Constant | PositiveRecall

NO_REJECTION = Constant(1e300)


def parse_policy(text: str) -> ThresholdPolicy:
    """``recall:<q>`` or ``constant:<theta>``."""
    kind, _, value = str(text).partition(":")
    try:
        v = float(value)
    except ValueError:
        raise ConfigurationError(f"bad threshold policy {text!r}") from None
    if kind == "recall":
        return PositiveRecall(v)
    if kind == "constant":
        return Constant(v)
    raise ConfigurationError(f"bad threshold policy {text!r}")


def calibrate_threshold(policy: ThresholdPolicy, positive_scores) -> float:
    """Stage threshold T.

    PositiveRecall(q) places T just above minus the (1-q)-quantile of the
    positive scores, so at least a fraction q of them satisfy F + T > 0.
    """
    if isinstance(policy, Constant):
        return float(policy.theta)
    s = np.sort(np.asarray(positive_scores, dtype=float))
    if s.size == 0:
        raise InvalidInputError("threshold calibration needs at least one positive score")
    k = int(math.floor(s.size * (1.0 - policy.q) + 1e-9))
    anchor = float(s[k])
    t = -anchor + RECALL_EPS
    while not anchor + t > 0.0:
        t = float(np.nextafter(t, math.inf))
    return t


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 256
    depth: int = 2
    eta: float = 0.0
    threshold_policy: ThresholdPolicy = field(default_factory=PositiveRecall)
    bootstrap_schedule: tuple[int, ...] = ()
    seed: int = 0
    subset_size: int | None = 256  # features per family per round; None = all
    loss: ComplexityLoss = ComplexityLoss.HINGE
    # (first round, family) pairs restricting which family may be used from
    # that round on; empty means every family competes every round
    family_schedule: tuple[tuple[int, str], ...] = ()
    threads: int | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError("rounds must be a positive integer")
        if self.depth < 1:
            raise ConfigurationError("depth must be at least 1")
        LagrangianConfig(self.eta, self.loss)
        sched = tuple(int(b) for b in self.bootstrap_schedule)
        if any(b2 <= b1 for b1, b2 in zip(sched, sched[1:])):
            raise ConfigurationError("bootstrap_schedule must be strictly increasing")
        if any(not 0 < b < self.rounds for b in sched):
            raise ConfigurationError("bootstrap rounds must lie in [1, rounds)")
        object.__setattr__(self, "bootstrap_schedule", sched)
        if self.subset_size is not None and self.subset_size < 1:
            raise ConfigurationError("subset_size must be positive or None")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["threshold_policy"] = str(self.threshold_policy)
        d["loss"] = self.loss.value
        d["bootstrap_schedule"] = list(self.bootstrap_schedule)
        d["family_schedule"] = [list(p) for p in self.family_schedule]
        d.pop("threads")
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        kw = dict(d)
        if "threshold_policy" in kw and isinstance(kw["threshold_policy"], str):
            kw["threshold_policy"] = parse_policy(kw["threshold_policy"])
        if "loss" in kw:
            kw["loss"] = ComplexityLoss(kw["loss"])
        if "bootstrap_schedule" in kw:
            kw["bootstrap_schedule"] = tuple(kw["bootstrap_schedule"])
        if "family_schedule" in kw:
            kw["family_schedule"] = tuple((int(a), str(b)) for a, b in kw["family_schedule"])
        known = set(cls.__dataclass_fields__)
        unknown = set(kw) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _thread_count(cfg: TrainConfig) -> int:
    if cfg.threads is not None:
        return max(1, cfg.threads)
    env = os.environ.get("COMPACT_THREADS")
    return max(1, int(env)) if env else 1


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class RoundRecord:
    round: int  # 1-based
    family: str
    features: tuple[int, ...]
    score: float  # D[g*]
    classification_term: float
    complexity_term: float
    fast_path: bool
    alpha: float
    threshold: float | None
    n_active: int  # |S_a| when the round started
    n_active_neg: int
    n_train: int
    base_cost: float
    pressure_bound: float  # eta/(m+1) * |S_a|/|S_t| * max candidate cost
    train_error: float
    empirical_risk: float
    bootstrapped: bool = False


@dataclass
class TrainResult:
    cascade: Cascade
    records: list[RoundRecord]
    final_train: Dataset
    shortfalls: list[int] = field(default_factory=list)


class _State:
    """Per-round training state over the current training set."""

    def __init__(self, data: Dataset):
        self.data = data
        self.y = data.labels
        n = len(data)
        self.F = np.zeros(n)
        self.active = np.ones(n, dtype=bool)
        self.fired = np.zeros((n, len(data.manifest.trigger_groups)), dtype=bool)
        self.order = presort(data.X)

    def replay(self, stages: Sequence[Stage], manifest: FamilyManifest) -> None:
        if not stages:
            return
        tr = evaluate_batch(Cascade(tuple(stages), manifest), self.data.X)
        self.F = tr.full_score.copy()
        self.active = tr.alive[-1].copy()
        self.fired = tr.fired.copy()


def _allowed_families(cfg: TrainConfig, round0: int, manifest: FamilyManifest) -> set[str]:
    allowed = {f.name for f in manifest.families}
    for start, name in cfg.family_schedule:
        if round0 >= start:
            allowed = {name}
    return allowed


def _example_costs(tree: Tree, manifest: FamilyManifest, fired: np.ndarray) -> tuple[np.ndarray, float]:
    base = learner_base_cost(tree, manifest)
    costs = np.full(fired.shape[0], base)
    group_ids = [g.id for g in manifest.trigger_groups]
    for g in learner_trigger_groups(tree, manifest):
        costs += np.where(fired[:, group_ids.index(g)], 0.0, manifest.trigger_cost(g))
    return costs, base


def _candidates(state: _State, weights: np.ndarray, cfg: TrainConfig, rng, round0: int, pool) -> list[Candidate]:
    manifest = state.data.manifest
    allowed = _allowed_families(cfg, round0, manifest)
    subsets = [(fam, ids) for fam, ids in stratified_subsets(manifest, cfg.subset_size, rng) if fam.name in allowed]
    X = state.data.X

    def fit(item):
        fam, ids = item
        tree = fit_tree(X, state.y, weights, cfg.depth, ids, state.order)
        costs, base = _example_costs(tree, manifest, state.fired)
        return Candidate(tree, tree.predict(X), costs, base, fam.name)

    if pool is None:
        return [fit(item) for item in subsets]
    return list(pool.map(fit, subsets))


def bootstrap_negatives(cascade: Cascade, pool: Dataset, target: int) -> tuple[Dataset | None, int]:
    """Hardest pool negatives that survive ``cascade``.

    Returns (mined examples or None, shortfall). Survivors are ranked by the
    cascade score, highest first; ties keep pool order.
    """
    if len(pool) == 0:
        raise InvalidInputError("negative pool is empty")
    tr = evaluate_batch(cascade, pool.X)
    keep = np.flatnonzero(tr.survived & (pool.labels == -1))
    order = keep[np.argsort(-tr.final_score[keep], kind="stable")][:max(target, 0)]
    shortfall = max(target - order.size, 0)
    if order.size == 0:
        return None, shortfall
    return pool.subset(order), shortfall


def _training_cascade(stages: list[Stage], manifest: FamilyManifest) -> Cascade:
    return Cascade(tuple(stages), manifest)


def _bootstrap(state: _State, stages: list[Stage], pool: Dataset, n_neg: int) -> tuple[Dataset, int]:
    data = state.data
    manifest = data.manifest
    taken = set(data.ids)
    fresh = [i for i, ex_id in enumerate(pool.ids) if ex_id not in taken]
    if not fresh:
        return data, n_neg
    mined, shortfall = bootstrap_negatives(_training_cascade(stages, manifest), pool.subset(fresh), n_neg)
    if mined is None:
        return data, shortfall
    positives = data.subset(data.labels == 1)
    negs = mined
    if shortfall:
        # refill with the current negatives the cascade finds hardest
        cur = np.flatnonzero(data.labels == -1)
        cur = cur[np.argsort(-state.F[cur], kind="stable")][:shortfall]
        negs = negs.concat(data.subset(cur))
    return positives.concat(negs), shortfall


def fit_cascade(dataset: Dataset, config: TrainConfig, *, negative_pool: Dataset | None = None) -> TrainResult:
    """Train a cascade and keep the per-round trace."""
    require_labels_present(dataset.labels)
    manifest = dataset.manifest
    if negative_pool is not None and negative_pool.manifest != manifest:
        raise InvalidInputError("negative pool uses a different manifest")
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    state = _State(dataset)
    n_neg_target = dataset.n_neg
    stages: list[Stage] = []
    records: list[RoundRecord] = []
    shortfalls: list[int] = []
    threads = _thread_count(cfg)
    executor = ThreadPoolExecutor(threads) if threads > 1 else None
    max_cost = max(
        f.unit_cost * (2 ** cfg.depth - 1) + (manifest.trigger_cost(f.trigger_group) if f.trigger_group else 0.0)
        for f in manifest.families
    )
    try:
        booted = False
        for m in range(cfg.rounds):
            y = state.y
            n = y.size
            w = np.exp(-y * state.F)
            psi = psi_weights(cfg.loss, y)
            n_active = int(state.active.sum())
            n_active_neg = int(np.sum(state.active & (y == -1)))
            cands = _candidates(state, w, cfg, rng, m, executor)
            best: Scored = select_weak_learner(cands, y, w, state.active, psi, m, cfg.eta)
            cand = best.candidate
            alpha = closed_form_alpha(y, w, cand.outputs)
            state.F = state.F + alpha * cand.outputs
            last = m == cfg.rounds - 1
            if last:
                threshold = None
            else:
                live_pos = state.F[state.active & (y == 1)]
                if live_pos.size:
                    threshold = calibrate_threshold(cfg.threshold_policy, live_pos)
                else:
                    # no positive left to protect: reject everything still active
                    threshold = -float(np.max(state.F[state.active], initial=0.0))
            group_ids = [g.id for g in manifest.trigger_groups]
            for g in learner_trigger_groups(cand.learner, manifest):
                state.fired[state.active, group_ids.index(g)] = True
            if threshold is not None:
                state.active = state.active & (state.F + threshold > 0.0)
            stages.append(Stage(cand.learner, alpha, threshold))
            # rejected examples are labeled negative whatever their score
            pred = np.where(state.active & (state.F > 0), 1, -1)
            records.append(RoundRecord(
                round=m + 1,
                family=cand.family,
                features=tuple(cand.learner.features()),
                score=best.score,
                classification_term=best.classification,
                complexity_term=best.complexity,
                fast_path=best.fast_path,
                alpha=alpha,
                threshold=threshold,
                n_active=n_active,
                n_active_neg=n_active_neg,
                n_train=n,
                base_cost=cand.base_cost,
                pressure_bound=cfg.eta / (m + 1) * n_active / n * max_cost,
                train_error=float(np.mean(pred != y)),
                empirical_risk=float(np.mean(np.exp(-y * state.F))),
                bootstrapped=booted,
            ))
            booted = False
            if negative_pool is not None and (m + 1) in cfg.bootstrap_schedule:
                data, shortfall = _bootstrap(state, stages, negative_pool, n_neg_target)
                shortfalls.append(shortfall)
                if shortfall:
                    log.warning("bootstrap after round %d: %d negatives short", m + 1, shortfall)
                state = _State(data)
                state.replay(stages, manifest)
                booted = True
    finally:
        if executor is not None:
            executor.shutdown()

    meta = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "eta": cfg.eta,
        "threshold_policy": str(cfg.threshold_policy),
        "trainer": "compact",
    }
    return TrainResult(Cascade(tuple(stages), manifest, meta), records, state.data, shortfalls)


def train_compact(dataset: Dataset, config: TrainConfig, *, negative_pool: Dataset | None = None) -> Cascade:
    return fit_cascade(dataset, config, negative_pool=negative_pool).cascade


def training_lagrangian(cascade: Cascade, dataset: Dataset, eta: float, loss: ComplexityLoss = ComplexityLoss.HINGE) -> float:
    """Empirical risk of the full-sum score plus eta times the complexity risk
    of the per-stage average cost."""
    tr = evaluate_batch(cascade, dataset.X)
    r_e = empirical_risk(dataset.labels, tr.full_score)
    r_c = complexity_risk(dataset.labels, tr.average_omega, loss)
    return lagrangian(r_e, r_c, LagrangianConfig(eta, loss))


# -- external final stage ----------------------------------------------------


def _gate_threshold(cascade: Cascade, dataset: Dataset, policy: ThresholdPolicy | None) -> float:
    """Threshold for the stage that stops being last.

    Uses ``policy`` (default: the policy the cascade was trained with) but
    never rejects an example the cascade labels positive, so a zero external
    score changes no prediction.
    """
    if policy is None:
        text = cascade.metadata.get("threshold_policy")
        policy = parse_policy(text) if text else Constant(0.0)
    tr = evaluate_batch(cascade, dataset.X)
    live_pos = tr.final_score[tr.survived & (dataset.labels == 1)]
    if isinstance(policy, PositiveRecall) and live_pos.size == 0:
        return 0.0
    return max(calibrate_threshold(policy, live_pos), 0.0)


def embed_external_stage(
    cascade: Cascade,
    scores: Mapping[str, float],
    dataset: Dataset,
    eta: float = 0.0,
    gate: ThresholdPolicy | None = None,
) -> Cascade:
    """Append an external scorer as the terminal stage.

    The current final stage gets a rejection threshold from ``gate`` (see
    :func:`_gate_threshold`); examples it keeps are scored by F + alpha * s,
    with alpha line-searched over them.
    """
    if cascade.has_external:
        raise InvalidInputError("cascade already ends in an external stage")
    stages = list(cascade.stages)
    last = stages[-1]
    stages[-1] = Stage(last.learner, last.alpha, _gate_threshold(cascade, dataset, gate))
    gated = Cascade(tuple(stages), cascade.manifest, cascade.metadata)
    tr = evaluate_batch(gated, dataset.X)
    active = np.flatnonzero(tr.survived)
    missing = [dataset.ids[i] for i in active if dataset.ids[i] not in scores]
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise InvalidInputError(f"external scores missing for {len(missing)} active examples: {shown}")
    if active.size:
        s = np.array([float(scores[dataset.ids[i]]) for i in active])
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("external scores must be finite")
        alpha = line_search_alpha(dataset.labels[active], tr.final_score[active], s, eta)
    else:
        alpha = 0.0
    meta = dict(cascade.metadata)
    meta["external_alpha"] = alpha
    return Cascade(tuple(stages) + (Stage(ExternalStage(), alpha, None),), cascade.manifest, meta)


def external_score_array(dataset: Dataset, scores: Mapping[str, float]) -> np.ndarray:
    """Align an id -> score map with ``dataset``; missing ids become NaN."""
    return np.array([float(scores.get(i, math.nan)) for i in dataset.ids])
