"""Feature families, evaluation costs and datasets.

A manifest partitions the global feature ids into contiguous families. Every
feature of a family has the family's unit cost. Families may belong to a
trigger group: the first time any feature of the group is evaluated for an
example, the group's one-time trigger cost is charged as well (a block
computation such as a CNN forward pass that yields all of its features).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ConfigurationError, InvalidInputError, SchemaError, as_labels


@dataclass(frozen=True)
class FeatureFamily:
    name: str
    start: int
    end: int  # exclusive
    unit_cost: float
    trigger_group: str | None = None
    disc: float = 0.0

    @property
    def size(self) -> int:
        return self.end - self.start

    def __contains__(self, feature_id: int) -> bool:
        return self.start <= feature_id < self.end


@dataclass(frozen=True)
class TriggerGroup:
    id: str
    trigger_cost: float


@dataclass(frozen=True)
class FamilyManifest:
    families: tuple[FeatureFamily, ...]
    trigger_groups: tuple[TriggerGroup, ...] = ()
    total_features: int = field(init=False)
    feature_family: np.ndarray = field(init=False, repr=False, compare=False)
    feature_cost: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        total = max((f.end for f in self.families), default=0)
        object.__setattr__(self, "total_features", total)
        fam = np.full(total, -1, dtype=np.int64)
        cost = np.zeros(total)
        for i, f in enumerate(self.families):
            fam[f.start:f.end] = i
            cost[f.start:f.end] = f.unit_cost
        fam.flags.writeable = False
        cost.flags.writeable = False
        object.__setattr__(self, "feature_family", fam)
        object.__setattr__(self, "feature_cost", cost)

    def family_of(self, feature_id: int) -> FeatureFamily:
        if not 0 <= feature_id < self.total_features:
            raise InvalidInputError(f"unknown feature id {feature_id}")
        return self.families[int(self.feature_family[feature_id])]

    def family_named(self, name: str) -> FeatureFamily:
        for f in self.families:
            if f.name == name:
                return f
        raise InvalidInputError(f"unknown family {name!r}")

    def trigger_cost(self, group_id: str) -> float:
        for g in self.trigger_groups:
            if g.id == group_id:
                return g.trigger_cost
        raise InvalidInputError(f"unknown trigger group {group_id!r}")

    def cost_rank(self) -> list[str]:
        """Family names from cheapest to most expensive (trigger included)."""
        def key(f: FeatureFamily):
            trig = self.trigger_cost(f.trigger_group) if f.trigger_group else 0.0
            return (f.unit_cost + trig, f.start)
        return [f.name for f in sorted(self.families, key=key)]

    def to_document(self) -> dict:
        return {
            "families": [
                {
                    "name": f.name,
                    "start": f.start,
                    "end": f.end,
                    "unit_cost": f.unit_cost,
                    "trigger_group": f.trigger_group,
                    "disc": f.disc,
                }
                for f in self.families
            ],
            "trigger_groups": [
                {"id": g.id, "trigger_cost": g.trigger_cost} for g in self.trigger_groups
            ],
        }


def _number(value, path: str, *, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected a number, got {value!r}", path)
    value = float(value)
    if not math.isfinite(value):
        raise SchemaError("must be finite", path)
    if positive and value <= 0:
        raise SchemaError(f"must be positive, got {value!r}", path)
    return value


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"expected an integer, got {value!r}", path)
    return value


def load_manifest(document: Mapping, *, check_trigger_dominance: bool = True) -> FamilyManifest:
    """Validate a manifest document (already parsed from JSON)."""
    if not isinstance(document, Mapping):
        raise SchemaError("manifest must be a JSON object", "manifest")
    raw_families = document.get("families")
    if not isinstance(raw_families, list) or not raw_families:
        raise SchemaError("must be a non-empty list", "families")
    raw_groups = document.get("trigger_groups", [])
    if not isinstance(raw_groups, list):
        raise SchemaError("must be a list", "trigger_groups")

    groups: list[TriggerGroup] = []
    for i, g in enumerate(raw_groups):
        path = f"trigger_groups[{i}]"
        if not isinstance(g, Mapping):
            raise SchemaError("must be an object", path)
        gid = g.get("id")
        if not isinstance(gid, str) or not gid:
            raise SchemaError("must be a non-empty string", f"{path}.id")
        if any(x.id == gid for x in groups):
            raise SchemaError(f"duplicate trigger group {gid!r}", f"{path}.id")
        groups.append(TriggerGroup(gid, _number(g.get("trigger_cost"), f"{path}.trigger_cost", positive=True)))
    group_ids = {g.id for g in groups}

    families: list[FeatureFamily] = []
    for i, f in enumerate(raw_families):
        path = f"families[{i}]"
        if not isinstance(f, Mapping):
            raise SchemaError("must be an object", path)
        name = f.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError("must be a non-empty string", f"{path}.name")
        if any(x.name == name for x in families):
            raise SchemaError(f"duplicate family name {name!r}", f"{path}.name")
        start = _integer(f.get("start"), f"{path}.start")
        end = _integer(f.get("end"), f"{path}.end")
        if start < 0 or end <= start:
            raise SchemaError(f"empty or negative range [{start}, {end})", f"{path}.end")
        unit_cost = _number(f.get("unit_cost"), f"{path}.unit_cost", positive=True)
        trig = f.get("trigger_group")
        if trig is not None:
            if not isinstance(trig, str):
                raise SchemaError("must be a string or null", f"{path}.trigger_group")
            if trig not in group_ids:
                raise SchemaError(f"references undeclared trigger group {trig!r}", f"{path}.trigger_group")
        disc = _number(f.get("disc", 0.0), f"{path}.disc")
        families.append(FeatureFamily(name, start, end, unit_cost, trig, disc))

    order = sorted(range(len(families)), key=lambda i: families[i].start)
    expected = 0
    for i in order:
        f = families[i]
        if f.start < expected:
            raise SchemaError(f"range [{f.start}, {f.end}) overlaps another family", f"families[{i}].start")
        if f.start > expected:
            raise SchemaError(f"gap in feature ids before {f.start} (expected {expected})", f"families[{i}].start")
        expected = f.end

    if check_trigger_dominance:
        for i, g in enumerate(groups):
            members = [f.unit_cost for f in families if f.trigger_group == g.id]
            if members and g.trigger_cost < max(members):
                raise SchemaError(
                    f"trigger cost {g.trigger_cost} below member unit cost {max(members)}",
                    f"trigger_groups[{i}].trigger_cost",
                )

    return FamilyManifest(tuple(families), tuple(groups))


# -- cost accounting ---------------------------------------------------------


@dataclass(frozen=True)
class TriggerState:
    """Trigger groups already fired while evaluating one example."""

    fired: frozenset[str] = frozenset()


def _learner_features(learner, manifest: FamilyManifest) -> tuple[int, ...]:
    feats = tuple(sorted(set(int(f) for f in learner.features())))
    for f in feats:
        if not 0 <= f < manifest.total_features:
            raise InvalidInputError(f"learner uses unknown feature id {f}")
    return feats


def learner_base_cost(learner, manifest: FamilyManifest) -> float:
    """Sum of unit costs over the distinct features the learner reads."""
    feats = _learner_features(learner, manifest)
    return float(sum(manifest.feature_cost[f] for f in feats))


def learner_trigger_groups(learner, manifest: FamilyManifest) -> tuple[str, ...]:
    feats = _learner_features(learner, manifest)
    groups = {manifest.family_of(f).trigger_group for f in feats}
    groups.discard(None)
    return tuple(sorted(groups))


def learner_cost_for_example(learner, manifest: FamilyManifest, state: TriggerState) -> tuple[float, TriggerState]:
    cost = learner_base_cost(learner, manifest)
    new = [g for g in learner_trigger_groups(learner, manifest) if g not in state.fired]
    if not new:
        return cost, state
    cost += sum(manifest.trigger_cost(g) for g in new)
    return cost, TriggerState(state.fired | frozenset(new))


# -- datasets ----------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    id: str
    label: int
    features: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: tuple[str, ...]
    labels: np.ndarray
    X: np.ndarray
    manifest: FamilyManifest

    def __post_init__(self):
        y = as_labels(self.labels)
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or len(self.ids) != y.shape[0]:
            raise InvalidInputError(
                f"inconsistent dataset shapes: {len(self.ids)} ids, {y.shape[0]} labels, X {X.shape}"
            )
        if y.shape[0] == 0:
            raise InvalidInputError("dataset is empty")
        if X.shape[1] != self.manifest.total_features:
            raise InvalidInputError(
                f"examples have {X.shape[1]} features, manifest declares {self.manifest.total_features}"
            )
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("feature values must be finite")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("example ids must be unique")
        y = y.copy()
        y.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_pos(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.sum(self.labels == -1))

    def example(self, i: int) -> Example:
        return Example(self.ids[i], int(self.labels[i]), self.X[i])

    def __iter__(self):
        return (self.example(i) for i in range(len(self)))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(tuple(self.ids[i] for i in index), self.labels[index], self.X[index], self.manifest)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.manifest != self.manifest:
            raise InvalidInputError("cannot concatenate datasets with different manifests")
        return Dataset(
            self.ids + other.ids,
            np.concatenate([self.labels, other.labels]),
            np.vstack([self.X, other.X]),
            self.manifest,
        )


def write_dataset_csv(path: str | os.PathLike, dataset: Dataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{k}" for k in range(dataset.X.shape[1])])
        for i in range(len(dataset)):
            w.writerow([dataset.ids[i], int(dataset.labels[i])] + [repr(float(v)) for v in dataset.X[i]])


def read_dataset_csv(path: str | os.PathLike, manifest: FamilyManifest) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        try:
            header = next(rows)
        except StopIteration:
            raise SchemaError("empty file", str(path)) from None
        k = manifest.total_features
        expected = ["id", "label"] + [f"f{j}" for j in range(k)]
        if header != expected:
            raise SchemaError(
                f"header must be id,label,f0..f{k - 1} ({k} features); got {len(header) - 2} feature columns",
                f"{path}:1",
            )
        ids, labels, values = [], [], []
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(expected):
                raise SchemaError(f"expected {len(expected)} fields, got {len(row)}", f"{path}:{lineno}")
            if row[1] not in ("-1", "1", "+1"):
                raise SchemaError(f"label must be -1 or 1, got {row[1]!r}", f"{path}:{lineno}")
            ids.append(row[0])
            labels.append(int(row[1]))
            try:
                values.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise SchemaError(str(exc), f"{path}:{lineno}") from None
    if not ids:
        raise SchemaError("no examples", str(path))
    return Dataset(tuple(ids), np.array(labels, dtype=np.int8), np.array(values, dtype=float), manifest)


# -- synthetic generator -----------------------------------------------------


@dataclass(frozen=True)
class FamilySpec:
    name: str
    n_features: int
    unit_cost: float
    disc: float
    trigger_group: str | None = None
    corr: float = 0.0  # within-family correlation through a shared latent factor


@dataclass(frozen=True)
class GeneratorConfig:
    families: tuple[FamilySpec, ...]
    trigger_groups: Mapping[str, float] = field(default_factory=dict)
    n_pos: int = 1000
    n_neg: int = 1000
    delta: float = 1.0
    id_prefix: str = ""

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorConfig":
        try:
            fams = tuple(
                FamilySpec(
                    name=f["name"],
                    n_features=int(f["n_features"]),
                    unit_cost=float(f["unit_cost"]),
                    disc=float(f["disc"]),
                    trigger_group=f.get("trigger_group"),
                    corr=float(f.get("corr", 0.0)),
                )
                for f in d["families"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad family entry: {exc}", "generator.families") from None
        return cls(
            families=fams,
            trigger_groups=dict(d.get("trigger_groups", {})),
            n_pos=int(d.get("n_pos", 1000)),
            n_neg=int(d.get("n_neg", 1000)),
            delta=float(d.get("delta", 1.0)),
            id_prefix=str(d.get("id_prefix", "")),
        )

    def to_dict(self) -> dict:
        return {
            "families": [
                {
                    "name": f.name,
                    "n_features": f.n_features,
                    "unit_cost": f.unit_cost,
                    "disc": f.disc,
                    "trigger_group": f.trigger_group,
                    "corr": f.corr,
                }
                for f in self.families
            ],
            "trigger_groups": dict(self.trigger_groups),
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "delta": self.delta,
            "id_prefix": self.id_prefix,
        }

    def with_counts(self, n_pos: int, n_neg: int, id_prefix: str | None = None) -> "GeneratorConfig":
        return GeneratorConfig(
            self.families, self.trigger_groups, n_pos, n_neg, self.delta,
            self.id_prefix if id_prefix is None else id_prefix,
        )


def default_generator_config() -> GeneratorConfig:
    """Cost ladder 1/2/4/9 plus a trigger-gated family (unit 1, trigger 50).

    Dearer families are more discriminative per feature. The gated family is
    small and internally correlated so it saturates after a few features.
    """
    return GeneratorConfig(
        families=(
            FamilySpec("acf", 30, 1.0, 0.36),
            FamilySpec("ss", 20, 2.0, 0.40),
            FamilySpec("cb", 15, 4.0, 0.45),
            FamilySpec("lda", 15, 9.0, 0.50),
            FamilySpec("cnn", 10, 1.0, 0.60, trigger_group="cnn", corr=0.5),
        ),
        trigger_groups={"cnn": 50.0},
    )


def manifest_from_generator(cfg: GeneratorConfig) -> FamilyManifest:
    doc = {"families": [], "trigger_groups": [{"id": k, "trigger_cost": v} for k, v in cfg.trigger_groups.items()]}
    start = 0
    for f in cfg.families:
        doc["families"].append(
            {"name": f.name, "start": start, "end": start + f.n_features, "unit_cost": f.unit_cost,
             "trigger_group": f.trigger_group, "disc": f.disc}
        )
        start += f.n_features
    return load_manifest(doc)


def stump_bayes_error(disc: float, delta: float = 1.0) -> float:
    """Bayes error of one feature: equal priors, means +-disc*delta, unit variance."""
    return 0.5 * math.erfc(disc * delta / math.sqrt(2.0))


def synth_generate(cfg: GeneratorConfig, seed: int) -> Dataset:
    """Two-Gaussian synthetic data: feature j of family f is drawn with mean
    y * disc_f * delta and unit variance. Deterministic in (cfg, seed)."""
    if cfg.n_pos < 1 or cfg.n_neg < 1:
        raise InvalidInputError("per-class counts must be at least 1")
    return _generate(cfg, seed)


def synth_negative_pool(cfg: GeneratorConfig, n_neg: int, seed: int, id_prefix: str = "pool") -> Dataset:
    """Negatives only, for hard-negative mining."""
    if n_neg < 1:
        raise InvalidInputError("pool size must be at least 1")
    return _generate(cfg.with_counts(0, n_neg, id_prefix), seed)


def _generate(cfg: GeneratorConfig, seed: int) -> Dataset:
    if not cfg.families:
        raise InvalidInputError("generator config names no families")
    for f in cfg.families:
        if f.n_features < 1:
            raise InvalidInputError(f"family {f.name!r} has no features")
        if not 0.0 <= f.corr < 1.0:
            raise InvalidInputError(f"family {f.name!r}: corr must lie in [0, 1)")
    manifest = manifest_from_generator(cfg)
    rng = np.random.default_rng(seed)
    n = cfg.n_pos + cfg.n_neg
    y = np.concatenate([np.ones(cfg.n_pos, dtype=np.int8), -np.ones(cfg.n_neg, dtype=np.int8)])
    y = y[rng.permutation(n)]
    blocks = []
    for f in cfg.families:
        shared = rng.standard_normal(n)[:, None]
        noise = rng.standard_normal((n, f.n_features))
        mean = (y.astype(float) * f.disc * cfg.delta)[:, None]
        blocks.append(mean + math.sqrt(f.corr) * shared + math.sqrt(1.0 - f.corr) * noise)
    X = np.hstack(blocks)
    ids = tuple(f"{cfg.id_prefix}{i}" for i in range(n))
    return Dataset(ids, y, X, manifest)


def family_usage(features: Iterable[int], manifest: FamilyManifest) -> list[str]:
    return sorted({manifest.family_of(int(f)).name for f in features})


def stratified_subsets(
    manifest: FamilyManifest, subset_size: int | None, rng: np.random.Generator | None
) -> list[tuple[FeatureFamily, np.ndarray]]:
    """One feature subset per family, sampled without replacement when the
    family is larger than ``subset_size``."""
    out = []
    for fam in manifest.families:
        ids = np.arange(fam.start, fam.end)
        if subset_size is not None and fam.size > subset_size:
            assert rng is not None
            ids = np.sort(rng.choice(ids, size=subset_size, replace=False))
        out.append((fam, ids))
    return out


def require_labels_present(labels: Sequence[int] | np.ndarray) -> None:
    y = np.asarray(labels)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ConfigurationError("training data needs at least one example of each label")
