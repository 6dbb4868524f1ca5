"""Risk and loss arithmetic shared by training and evaluation.

Labels are plain ints in {-1, +1}. Scores are predictor outputs F(x).
The classification risk uses the exponential loss; the complexity risk uses a
complexity loss applied to the label-signed evaluation cost.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class CompactError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CompactError, ValueError):
    pass


class SchemaError(InvalidInputError):
    """A document (manifest, model, dataset) does not match its schema.

    ``path`` names the offending node, e.g. ``stages[3].threshold``.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ConfigurationError(CompactError, ValueError):
    pass


class NonUniformCostError(CompactError):
    """Raised when the fast selection score is requested for a learner whose
    cost differs across active examples."""


LABELS = (-1, 1)


def check_label(label) -> int:
    if label not in LABELS or isinstance(label, bool):
        raise InvalidInputError(f"label must be -1 or +1, got {label!r}")
    return int(label)


def as_labels(labels: Sequence[int] | np.ndarray) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise InvalidInputError("labels must be one-dimensional")
    if y.size and not np.all((y == 1) | (y == -1)):
        raise InvalidInputError("labels must be -1 or +1")
    return y.astype(np.int8) if y.dtype != np.int8 else y


def _check_pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: labels {a.shape} vs {what} {b.shape}")
    if a.size == 0:
        raise InvalidInputError("empty input")
    return as_labels(a), b


def exp_weight(label: int, score: float) -> float:
    """Boosting weight exp(-y F(x))."""
    label = check_label(label)
    if not math.isfinite(score):
        raise InvalidInputError(f"score must be finite, got {score!r}")
    return math.exp(-label * score)


def exp_weights(labels, scores) -> np.ndarray:
    """Vectorized :func:`exp_weight`."""
    y, f = _check_pair(labels, scores, "scores")
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("scores must be finite")
    return np.exp(-y * f)


def empirical_risk(labels, scores) -> float:
    y, f = _check_pair(labels, scores, "scores")
    return float(np.mean(np.exp(-y * f)))


def complexity_margin(label: int, omega: float) -> float:
    label = check_label(label)
    if not omega >= 0:
        raise InvalidInputError(f"omega must be non-negative, got {omega!r}")
    return label * omega


class ComplexityLoss(enum.Enum):
    HINGE = "hinge"


def complexity_loss_value(loss: ComplexityLoss, v: float) -> float:
    if loss is ComplexityLoss.HINGE:
        return max(0.0, -v)
    raise InvalidInputError(f"unsupported complexity loss {loss!r}")


def psi_weight(loss: ComplexityLoss, label: int, omega_f: float) -> float:
    """Complexity weight -tau'(y * Omega(F)).

    The hinge loss has a kink at zero; the left derivative is used there so a
    negative example carries weight 1 before it has accrued any cost.
    """
    label = check_label(label)
    if not omega_f >= 0:
        raise InvalidInputError(f"omega_f must be non-negative, got {omega_f!r}")
    if loss is ComplexityLoss.HINGE:
        return 1.0 if label == -1 else 0.0
    raise InvalidInputError(f"unsupported complexity loss {loss!r}")


def psi_weights(loss: ComplexityLoss, labels) -> np.ndarray:
    y = as_labels(labels)
    if loss is ComplexityLoss.HINGE:
        return (y == -1).astype(float)
    raise InvalidInputError(f"unsupported complexity loss {loss!r}")


def complexity_risk(labels, omegas, loss: ComplexityLoss = ComplexityLoss.HINGE) -> float:
    y, om = _check_pair(labels, omegas, "omegas")
    if np.any(om < 0):
        raise InvalidInputError("omegas must be non-negative")
    if loss is ComplexityLoss.HINGE:
        return float(np.sum(np.maximum(0.0, -(y * om))) / y.size)
    raise InvalidInputError(f"unsupported complexity loss {loss!r}")


@dataclass(frozen=True)
class LagrangianConfig:
    eta: float = 0.0
    loss: ComplexityLoss = ComplexityLoss.HINGE

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ConfigurationError(f"eta must be a finite non-negative number, got {self.eta!r}")


def lagrangian(risk_e: float, risk_c: float, cfg: LagrangianConfig) -> float:
    return risk_e + cfg.eta * risk_c
