from ..trees import Node, Stump, Tree, best_stump, fit_stump, fit_tree, weighted_edge
from .selection import (
    ALPHA_MAX,
    Candidate,
    Scored,
    closed_form_alpha,
    line_search_alpha,
    score_candidate,
    score_direction,
    score_direction_fast,
    select_weak_learner,
    uniform_active_cost,
)
from .train import (
    NO_REJECTION,
    Constant,
    PositiveRecall,
    RoundRecord,
    TrainConfig,
    TrainResult,
    bootstrap_negatives,
    calibrate_threshold,
    embed_external_stage,
    external_score_array,
    fit_cascade,
    parse_policy,
    train_compact,
    training_lagrangian,
)
