"""Embedded cascades: staged prediction with early exit and cost metering.

Stage k adds ``alpha_k * g_k(x)`` to the running score. After stage k an
example continues only while ``F_k(x) + T_k > 0``; the final stage has no
threshold. Stages are numbered from 1 in traces and reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .trees import Node, Tree
from .core import InvalidInputError, SchemaError, as_labels
from .pool import (
    Dataset,
    Example,
    FamilyManifest,
    TriggerState,
    learner_base_cost,
    learner_trigger_groups,
    load_manifest,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExternalStage:
    """Final-stage learner whose output is a precomputed external score."""

    def features(self) -> tuple[int, ...]:
        return ()


@dataclass(frozen=True)
class Stage:
    learner: Tree | ExternalStage
    alpha: float
    threshold: float | None

    @property
    def is_external(self) -> bool:
        return isinstance(self.learner, ExternalStage)


@dataclass(frozen=True, eq=False)
class Cascade:
    stages: tuple[Stage, ...]
    manifest: FamilyManifest
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise InvalidInputError("a cascade needs at least one stage")
        last = len(self.stages) - 1
        for k, st in enumerate(self.stages):
            if not math.isfinite(st.alpha):
                raise InvalidInputError(f"stages[{k}].alpha is not finite")
            if st.threshold is None and k != last:
                raise InvalidInputError(f"stages[{k}].threshold: only the final stage may lack a threshold")
            if st.threshold is not None and not math.isfinite(st.threshold):
                raise InvalidInputError(f"stages[{k}].threshold is not finite")
            if st.is_external and k != last:
                raise InvalidInputError(f"stages[{k}]: an external stage must be the final stage")
        costs, groups = [], []
        for st in self.stages:
            if st.is_external:
                costs.append(0.0)
                groups.append(())
            else:
                costs.append(learner_base_cost(st.learner, self.manifest))
                groups.append(learner_trigger_groups(st.learner, self.manifest))
        object.__setattr__(self, "stage_base_costs", tuple(costs))
        object.__setattr__(self, "stage_groups", tuple(groups))

    def __len__(self) -> int:
        return len(self.stages)

    @property
    def has_external(self) -> bool:
        return self.stages[-1].is_external

    def stage_family(self, k: int) -> str:
        """Families used by stage ``k`` (0-based), joined with "+" in feature order."""
        st = self.stages[k]
        if st.is_external:
            return "external"
        names = []
        for f in st.learner.features():
            name = self.manifest.family_of(f).name
            if name not in names:
                names.append(name)
        return "+".join(names)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cascade):
            return NotImplemented
        return serialize(self) == serialize(other)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class EvalTrace:
    final_score: float
    survived: bool
    rejected_at: int | None
    stage_costs: tuple[float, ...]
    total_omega: float
    average_omega: float


def _u(value: float) -> bool:
    # Heaviside with u(0) = 0
    return value > 0.0


def rejection_indicator(cascade: Cascade, partial_scores: Sequence[float], k: int) -> bool:
    """r_k: true iff F_j + T_j > 0 for every stage j < k (1-based)."""
    m = len(cascade)
    if not 1 <= k <= m + 1:
        raise InvalidInputError(f"k must lie in [1, {m + 1}], got {k}")
    for j in range(k - 1):
        t = cascade.stages[j].threshold
        if t is not None and not _u(partial_scores[j] + t):
            return False
    return True


def _features_of(cascade: Cascade, example) -> np.ndarray:
    x = example.features if isinstance(example, Example) else example
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != cascade.manifest.total_features:
        raise InvalidInputError(
            f"example has {x.shape[-1] if x.ndim else 0} features, manifest declares {cascade.manifest.total_features}"
        )
    return x


def _stage_cost(cascade: Cascade, k: int, state: TriggerState) -> tuple[float, TriggerState]:
    cost = cascade.stage_base_costs[k]
    new = [g for g in cascade.stage_groups[k] if g not in state.fired]
    if not new:
        return cost, state
    cost += sum(cascade.manifest.trigger_cost(g) for g in new)
    return cost, TriggerState(state.fired | frozenset(new))


def evaluate(cascade: Cascade, example, external_score: float | None = None) -> EvalTrace:
    """Run one example through the cascade, stopping at the first rejection."""
    x = _features_of(cascade, example)
    m = len(cascade)
    score = 0.0
    state = TriggerState()
    costs: list[float] = []
    rejected_at = None
    for k, st in enumerate(cascade.stages):
        cost, state = _stage_cost(cascade, k, state)
        costs.append(cost)
        if st.is_external:
            if external_score is None or not math.isfinite(external_score):
                raise InvalidInputError("example reaches the external stage but has no external score")
            score = score + st.alpha * float(external_score)
        else:
            score = score + st.alpha * st.learner.predict_one(x)
        if st.threshold is not None and not _u(score + st.threshold):
            rejected_at = k + 1
            break
    total = float(sum(costs))
    return EvalTrace(score, rejected_at is None, rejected_at, tuple(costs), total, total / m)


@dataclass(frozen=True, eq=False)
class BatchTrace:
    """Vectorized evaluation of many examples.

    ``final_score`` is the score at exit; ``full_score`` sums every tree stage
    regardless of rejection (what training uses for the boosting weights).
    ``rejected_at`` is 0 for survivors. ``fired`` is (n, n_groups) over
    ``manifest.trigger_groups``.
    """

    final_score: np.ndarray
    full_score: np.ndarray
    rejected_at: np.ndarray
    n_evaluated: np.ndarray
    total_omega: np.ndarray
    average_omega: np.ndarray
    stage_outputs: np.ndarray  # (m, n) learner outputs, external stage included
    stage_scores: np.ndarray  # (m, n) running scores F_k
    alive: np.ndarray  # (m + 1, n) r_k for k = 1..m+1
    fired: np.ndarray

    @property
    def survived(self) -> np.ndarray:
        return self.rejected_at == 0


def evaluate_batch(cascade: Cascade, X: np.ndarray, external_scores: np.ndarray | None = None) -> BatchTrace:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cascade.manifest.total_features:
        raise InvalidInputError(
            f"examples have {X.shape[-1]} features, manifest declares {cascade.manifest.total_features}"
        )
    n, m = X.shape[0], len(cascade)
    group_ids = [g.id for g in cascade.manifest.trigger_groups]
    fired = np.zeros((n, len(group_ids)), dtype=bool)
    alive = np.ones((m + 1, n), dtype=bool)
    outputs = np.zeros((m, n))
    scores = np.zeros((m, n))
    final = np.zeros(n)
    rejected = np.zeros(n, dtype=np.int64)
    total = np.zeros(n)
    F = np.zeros(n)
    full = np.zeros(n)
    for k, st in enumerate(cascade.stages):
        live = alive[k]
        cost = np.full(n, cascade.stage_base_costs[k])
        for g in cascade.stage_groups[k]:
            gi = group_ids.index(g)
            cost += np.where(fired[:, gi], 0.0, cascade.manifest.trigger_cost(g))
            fired[live, gi] = True
        total += np.where(live, cost, 0.0)
        if st.is_external:
            if external_scores is None:
                s = np.full(n, np.nan)
            else:
                s = np.asarray(external_scores, dtype=float)
                if s.shape != (n,):
                    raise InvalidInputError("external scores must align with the examples")
            if np.any(~np.isfinite(s[live])):
                raise InvalidInputError("examples reach the external stage without an external score")
            out = np.where(live, s, 0.0)
        else:
            out = st.learner.predict(X).astype(float)
            full = full + st.alpha * out
        outputs[k] = out
        F = F + st.alpha * out
        scores[k] = F
        final = np.where(live, F, final)
        if st.threshold is None:
            alive[k + 1] = live
        else:
            passed = F + st.threshold > 0.0
            alive[k + 1] = live & passed
            rejected = np.where(live & ~passed, k + 1, rejected)
    n_eval = alive[:m].sum(axis=0)
    return BatchTrace(
        final_score=final,
        full_score=full,
        rejected_at=rejected,
        n_evaluated=n_eval,
        total_omega=total,
        average_omega=total / m,
        stage_outputs=outputs,
        stage_scores=scores,
        alive=alive,
        fired=fired,
    )


def predict(cascade: Cascade, X: np.ndarray, external_scores=None) -> np.ndarray:
    """Labels: +1 iff the example survives every stage with a positive score."""
    tr = evaluate_batch(cascade, X, external_scores)
    return np.where(tr.survived & (tr.final_score > 0), 1, -1).astype(np.int8)


# -- metrics -----------------------------------------------------------------


def _stats(values: np.ndarray) -> dict | None:
    if values.size == 0:
        return None
    p50, p90, p99 = np.percentile(values, [50, 90, 99])
    return {"mean": float(values.mean()), "p50": float(p50), "p90": float(p90), "p99": float(p99),
            "max": float(values.max())}


def roc_points(labels: np.ndarray, scores: np.ndarray) -> list[tuple[float, float | None, float | None]]:
    """(threshold, tpr, fpr) at every distinct score; predicted positive iff score > threshold."""
    y = as_labels(labels)
    n_pos, n_neg = int(np.sum(y == 1)), int(np.sum(y == -1))
    pts = []
    for t in np.unique(scores[np.isfinite(scores)]):
        pred = scores > t
        tpr = float(np.sum(pred & (y == 1)) / n_pos) if n_pos else None
        fpr = float(np.sum(pred & (y == -1)) / n_neg) if n_neg else None
        pts.append((float(t), tpr, fpr))
    return pts


def batch_metrics(cascade: Cascade, dataset: Dataset, external_scores=None, *, roc: bool = True) -> dict:
    """Classification and complexity summary at decision score 0.

    Rates that would divide by zero (no negatives for the false-positive rate,
    no positives for the false-negative rate) are reported as ``None``.
    """
    tr = evaluate_batch(cascade, dataset.X, external_scores)
    y = dataset.labels
    pred = np.where(tr.survived & (tr.final_score > 0), 1, -1)
    pos, neg = y == 1, y == -1
    out = {
        "n": int(y.size),
        "n_pos": int(pos.sum()),
        "n_neg": int(neg.sum()),
        "error": float(np.mean(pred != y)),
        "fpr": float(np.mean(pred[neg] == 1)) if neg.any() else None,
        "fnr": float(np.mean(pred[pos] == -1)) if pos.any() else None,
        "survivors": int(tr.survived.sum()),
        "total_omega_pos": _stats(tr.total_omega[pos]),
        "total_omega_neg": _stats(tr.total_omega[neg]),
        "mean_total_omega": float(tr.total_omega.mean()),
        "mean_average_omega": float(tr.average_omega.mean()),
        "stages": len(cascade),
    }
    if roc:
        ranked = np.where(tr.survived, tr.final_score, -np.inf)
        out["roc"] = [list(p) for p in roc_points(y, ranked)]
    return out


# -- serialization -----------------------------------------------------------


def _float_out(v: float):
    v = float(v)
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def _tree_doc(tree: Tree) -> list[dict]:
    out = []
    for nd in tree.nodes:
        if nd.is_leaf:
            out.append({"value": int(nd.value)})
        else:
            out.append({"feature": int(nd.feature), "threshold": _float_out(nd.threshold),
                        "left": int(nd.left), "right": int(nd.right)})
    return out


def to_document(cascade: Cascade) -> dict:
    stages = []
    for st in cascade.stages:
        if st.is_external:
            stages.append({"kind": "external", "alpha": float(st.alpha)})
        else:
            stages.append({
                "kind": "tree",
                "nodes": _tree_doc(st.learner),
                "alpha": float(st.alpha),
                "threshold": None if st.threshold is None else float(st.threshold),
            })
    return {
        "version": SCHEMA_VERSION,
        "manifest": cascade.manifest.to_document(),
        "stages": stages,
        "metadata": dict(cascade.metadata),
    }


def canonical_json(document) -> bytes:
    return (json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
            + "\n").encode("utf-8")


def serialize(cascade: Cascade) -> bytes:
    """Canonical UTF-8 JSON: sorted keys, no whitespace, shortest round-trip floats."""
    return canonical_json(to_document(cascade))


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"expected a number, got {type(v).__name__} {v!r}", path)
    if not math.isfinite(v):
        raise SchemaError("must be finite", path)
    return float(v)


def _int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"expected an integer, got {v!r}", path)
    return v


def _node_threshold(v, path: str) -> float:
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return _num(v, path)


def _parse_tree(nodes, path: str) -> Tree:
    if not isinstance(nodes, list) or not nodes:
        raise SchemaError("must be a non-empty list", path)
    parsed = []
    for i, nd in enumerate(nodes):
        p = f"{path}[{i}]"
        if not isinstance(nd, dict):
            raise SchemaError("must be an object", p)
        if "value" in nd:
            v = _int(nd["value"], f"{p}.value")
            if v not in (-1, 1):
                raise SchemaError("leaf value must be -1 or 1", f"{p}.value")
            parsed.append(Node(value=v))
        else:
            for key in ("feature", "threshold", "left", "right"):
                if key not in nd:
                    raise SchemaError("missing field", f"{p}.{key}")
            parsed.append(Node(
                feature=_int(nd["feature"], f"{p}.feature"),
                threshold=_node_threshold(nd["threshold"], f"{p}.threshold"),
                left=_int(nd["left"], f"{p}.left"),
                right=_int(nd["right"], f"{p}.right"),
            ))
    try:
        return Tree(tuple(parsed))
    except InvalidInputError as exc:
        raise SchemaError(str(exc), path) from None


def from_document(doc: Mapping) -> Cascade:
    if not isinstance(doc, Mapping):
        raise SchemaError("model must be a JSON object", "$")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported model version {doc.get('version')!r} (expected {SCHEMA_VERSION})", "version")
    if "manifest" not in doc:
        raise SchemaError("missing field", "manifest")
    try:
        manifest = load_manifest(doc["manifest"], check_trigger_dominance=False)
    except SchemaError as exc:
        raise SchemaError(str(exc), "manifest") from None
    raw = doc.get("stages")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("must be a non-empty list", "stages")
    stages = []
    for k, st in enumerate(raw):
        p = f"stages[{k}]"
        if not isinstance(st, dict):
            raise SchemaError("must be an object", p)
        kind = st.get("kind")
        if "alpha" not in st:
            raise SchemaError("missing field", f"{p}.alpha")
        alpha = _num(st["alpha"], f"{p}.alpha")
        if kind == "external":
            if k != len(raw) - 1:
                raise SchemaError("an external stage must be the final stage", p)
            stages.append(Stage(ExternalStage(), alpha, None))
        elif kind == "tree":
            if "threshold" not in st:
                raise SchemaError("missing field", f"{p}.threshold")
            t = st["threshold"]
            if t is None:
                if k != len(raw) - 1:
                    raise SchemaError("only the final stage may have a null threshold", f"{p}.threshold")
            else:
                t = _num(t, f"{p}.threshold")
            tree = _parse_tree(st.get("nodes"), f"{p}.nodes")
            for f in tree.features():
                if not 0 <= f < manifest.total_features:
                    raise SchemaError(f"feature {f} outside the manifest", f"{p}.nodes")
            stages.append(Stage(tree, alpha, t))
        else:
            raise SchemaError(f"unknown stage kind {kind!r}", f"{p}.kind")
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise SchemaError("must be an object", "metadata")
    return Cascade(tuple(stages), manifest, meta)


def deserialize(data: bytes | str | Mapping) -> Cascade:
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}", "$") from None
    return from_document(data)
