"""Experiment harness: synthetic benchmark, sweeps and the command line."""

from .benchmark import (
    Benchmark,
    BenchmarkConfig,
    SweepRow,
    first_use,
    make_benchmark,
    noisy_margin_scores,
    proposal_predictions,
    run_sweep,
    stage_configuration,
    stage_families,
    sweep_rows,
    train_and_measure,
)
