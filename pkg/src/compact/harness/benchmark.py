"""The default synthetic benchmark and the experiment helpers built on it."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

import numpy as np

from ..boost import Constant, RoundRecord, TrainConfig, fit_cascade
from ..cascade import Cascade, batch_metrics, evaluate_batch
from ..core import ConfigurationError
from ..pool import Dataset, FamilyManifest, GeneratorConfig, default_generator_config, synth_generate, synth_negative_pool

# bootstrap after these rounds of a 256-round run
DEFAULT_BOOTSTRAPS = (4, 16, 32, 64, 128, 192)


@dataclass(frozen=True)
class BenchmarkConfig:
    generator: GeneratorConfig = field(default_factory=default_generator_config)
    n_train: int = 1000  # per class
    n_test: int = 1000  # per class
    pool_size: int = 10000  # negatives available for bootstrapping
    rounds: int = 256
    depth: int = 2
    threshold: float = 3.0  # reject once F <= -threshold
    bootstrap_schedule: tuple[int, ...] = DEFAULT_BOOTSTRAPS

    def train_config(self, eta: float, seed: int = 0) -> TrainConfig:
        sched = tuple(b for b in self.bootstrap_schedule if b < self.rounds) if self.pool_size else ()
        return TrainConfig(
            rounds=self.rounds,
            depth=self.depth,
            eta=eta,
            threshold_policy=Constant(self.threshold),
            bootstrap_schedule=sched,
            seed=seed,
        )


@dataclass(frozen=True)
class Benchmark:
    train: Dataset
    test: Dataset
    pool: Dataset | None
    config: BenchmarkConfig
    seed: int

    @property
    def manifest(self) -> FamilyManifest:
        return self.train.manifest


def make_benchmark(seed: int, config: BenchmarkConfig | None = None) -> Benchmark:
    """Train, test and negative-pool sets drawn from independent streams of ``seed``."""
    cfg = config or BenchmarkConfig()
    s_train, s_test, s_pool = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    gen = cfg.generator
    train = synth_generate(gen.with_counts(cfg.n_train, cfg.n_train, f"tr{seed}_"), s_train)
    test = synth_generate(gen.with_counts(cfg.n_test, cfg.n_test, f"te{seed}_"), s_test)
    pool = synth_negative_pool(gen, cfg.pool_size, s_pool, f"pl{seed}_") if cfg.pool_size else None
    return Benchmark(train, test, pool, cfg, seed)


def stage_families(cascade: Cascade) -> list[str]:
    return [cascade.stage_family(k) for k in range(len(cascade))]


def first_use(families: Sequence[str], manifest: FamilyManifest) -> dict[str, int | None]:
    """1-based index of the first stage drawing on each family, None if never."""
    out: dict[str, int | None] = {f.name: None for f in manifest.families}
    for k, label in enumerate(families, start=1):
        for name in label.split("+"):
            if name in out and out[name] is None:
                out[name] = k
    return out


def stage_configuration(cascade: Cascade) -> list[dict]:
    """One row per stage: family, alpha, threshold and trigger-free cost."""
    rows = []
    for k, st in enumerate(cascade.stages):
        rows.append({
            "stage": k + 1,
            "family": cascade.stage_family(k),
            "alpha": st.alpha,
            "threshold": st.threshold,
            "base_cost": cascade.stage_base_costs[k],
        })
    return rows


@dataclass(frozen=True)
class SweepRow:
    eta: float
    train_error: float
    test_error: float | None
    neg_total_omega: float | None
    pos_total_omega: float | None
    first_use: Mapping[str, int | None]
    wall_clock: float
    cascade: Cascade = field(repr=False, compare=False)
    records: tuple[RoundRecord, ...] = field(repr=False, compare=False, default=())


def _mean(stats) -> float | None:
    return None if stats is None else stats["mean"]


def train_and_measure(
    train: Dataset,
    config: TrainConfig,
    test: Dataset | None = None,
    pool: Dataset | None = None,
) -> SweepRow:
    """Train one model and summarize it on ``test`` (training data if absent)."""
    t0 = time.perf_counter()
    res = fit_cascade(train, config, negative_pool=pool)
    elapsed = time.perf_counter() - t0
    cascade = res.cascade
    target = test if test is not None else train
    m = batch_metrics(cascade, target, roc=False)
    train_err = batch_metrics(cascade, train, roc=False)["error"]
    return SweepRow(
        eta=config.eta,
        train_error=train_err,
        test_error=m["error"] if test is not None else None,
        neg_total_omega=_mean(m["total_omega_neg"]),
        pos_total_omega=_mean(m["total_omega_pos"]),
        first_use=first_use(stage_families(cascade), train.manifest),
        wall_clock=elapsed,
        cascade=cascade,
        records=tuple(res.records),
    )


def sweep_rows(
    train: Dataset,
    base: TrainConfig,
    etas: Sequence[float],
    *,
    test: Dataset | None = None,
    pool: Dataset | None = None,
    threads: int = 1,
) -> Iterator[SweepRow]:
    """Lazily train one model per eta, in ascending eta order.

    Models share data and seed. With ``threads`` > 1 they train concurrently,
    but rows still arrive in order, so a failure leaves a clean prefix.
    """
    grid = sorted({float(e) for e in etas})
    if not grid:
        raise ConfigurationError("eta grid is empty")
    configs = [replace(base, eta=e) for e in grid]
    if threads <= 1:
        for c in configs:
            yield train_and_measure(train, c, test, pool)
        return
    with ThreadPoolExecutor(threads) as ex:
        yield from ex.map(lambda c: train_and_measure(train, c, test, pool), configs)


def run_sweep(train: Dataset, base: TrainConfig, etas: Sequence[float], **kw) -> list[SweepRow]:
    return list(sweep_rows(train, base, etas, **kw))


# -- external scorer ---------------------------------------------------------


def noisy_margin_scores(dataset: Dataset, seed: int, signal: float = 1.0, noise: float = 1.0) -> dict[str, float]:
    """Stand-in for a strong external classifier: signal * y plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    s = signal * dataset.labels.astype(float) + noise * rng.standard_normal(len(dataset))
    return {ex_id: float(v) for ex_id, v in zip(dataset.ids, s)}


def proposal_predictions(embedded: Cascade, X: np.ndarray, external: np.ndarray) -> np.ndarray:
    """Examples reaching the external stage of ``embedded``, labeled by the
    external score alone: the cascade acts as a proposal generator."""
    tr = evaluate_batch(embedded, X, external)
    return np.where(tr.survived & (external > 0), 1, -1)
