"""Complexity-aware boosted cascades."""

from .core import (
    CompactError,
    ComplexityLoss,
    ConfigurationError,
    InvalidInputError,
    LagrangianConfig,
    NonUniformCostError,
    SchemaError,
    complexity_loss_value,
    complexity_margin,
    complexity_risk,
    empirical_risk,
    exp_weight,
    lagrangian,
    psi_weight,
)
from .pool import (
    Dataset,
    FamilyManifest,
    GeneratorConfig,
    TriggerState,
    default_generator_config,
    learner_base_cost,
    learner_cost_for_example,
    load_manifest,
    synth_generate,
)
from .cascade import Cascade, Stage, batch_metrics, deserialize, evaluate, evaluate_batch, serialize
from .boost import TrainConfig, embed_external_stage, train_compact

__version__ = "0.1.0"
