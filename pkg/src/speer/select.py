"""Feature-based salience classifier over ESGs.

Stands in for a large encoder: each ESG becomes a fixed 8-dimensional feature
vector, a logistic-regression model scores it, and a threshold sweep turns the
scores into a precision-recall curve. Externally computed scores can be
injected through the prediction JSONL, so downstream stages are indifferent to
which selector produced them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .entity import SEMANTIC_TYPES
from .errors import DataFormatError
from .esg import ESG

FEATURE_VERSION = 1
FEATURE_DIM = 8
FEATURE_NAMES = (
    "log_mention_count",
    "freq_rank_norm",
    "is_problem",
    "is_test",
    "is_treatment",
    "doc_frequency",
    "first_position",
    "log_surface_count",
)

DEFAULT_EPOCHS = 2000
DEFAULT_LEARNING_RATE = 0.1


@dataclass(frozen=True)
class AdmissionStats:
    """Per-admission context needed to featurize its ESGs."""

    note_count: int
    total_esgs: int
    concat_length: int
    body_offsets: Mapping[str, int] | None = None


@dataclass(frozen=True)
class SalienceModel:
    weights: np.ndarray
    bias: float
    epochs: int | None = None
    learning_rate: float | None = None
    seed: int | None = None
    losses: tuple[float, ...] = ()


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


def featurize(esg: ESG, stats: AdmissionStats) -> np.ndarray:
    """Fixed-order features; see FEATURE_NAMES. Requires a ranked ESG."""
    if esg.freq_rank is None:
        raise ValueError(f"ESG {esg.esg_id} has no freq_rank; rank before featurizing")
    if stats.note_count < 1 or stats.total_esgs < 1 or stats.concat_length < 1:
        raise ValueError("admission stats must be positive")

    offsets = stats.body_offsets or {}
    first_position = min(offsets.get(m.doc_id, 0) + m.start for m in esg.mentions)

    features = np.zeros(FEATURE_DIM, dtype=np.float64)
    features[0] = math.log1p(esg.mention_count)
    features[1] = esg.freq_rank / stats.total_esgs
    features[2 + SEMANTIC_TYPES.index(esg.semantic_type)] = 1.0
    features[5] = len({m.doc_id for m in esg.mentions}) / stats.note_count
    features[6] = min(1.0, first_position / stats.concat_length)
    features[7] = math.log1p(len(esg.surfaces))
    return features


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    expz = np.exp(z[~positive])
    out[~positive] = expz / (1.0 + expz)
    return out


def logistic_loss(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood, computed in log-space for stability."""
    z = X @ weights + bias
    return float(np.mean(np.logaddexp(0.0, -z) + (1.0 - y) * z))


def loss_gradient(
    weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    residual = _sigmoid(X @ weights + bias) - y
    return X.T @ residual / len(y), float(np.mean(residual))


def train(
    examples: Sequence[tuple[np.ndarray, bool]],
    epochs: int = DEFAULT_EPOCHS,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    seed: int = 0,
) -> SalienceModel:
    """Full-batch gradient descent on the logistic loss; deterministic per seed."""
    if not examples:
        raise ValueError("no training examples")
    X = np.stack([np.asarray(f, dtype=np.float64) for f, _ in examples])
    y = np.array([1.0 if label else 0.0 for _, label in examples])
    if X.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected {FEATURE_DIM}-dimensional features, got {X.shape[1]}")
    if y.min() == y.max():
        raise ValueError("training requires at least one positive and one negative example")

    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.01, FEATURE_DIM)
    bias = 0.0
    losses = [logistic_loss(weights, bias, X, y)]
    for _ in range(epochs):
        grad_w, grad_b = loss_gradient(weights, bias, X, y)
        weights = weights - learning_rate * grad_w
        bias = bias - learning_rate * grad_b
        losses.append(logistic_loss(weights, bias, X, y))
    weights.setflags(write=False)
    return SalienceModel(
        weights=weights,
        bias=bias,
        epochs=epochs,
        learning_rate=learning_rate,
        seed=seed,
        losses=tuple(losses),
    )


def predict(model: SalienceModel, features: np.ndarray) -> float:
    z = float(np.dot(model.weights, np.asarray(features, dtype=np.float64)) + model.bias)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    expz = math.exp(z)
    return expz / (1.0 + expz)


def save_model(model: SalienceModel, path: str | Path) -> None:
    payload = {
        "weights": [float(w) for w in model.weights],
        "bias": float(model.bias),
        "feature_version": FEATURE_VERSION,
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> SalienceModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"model file {path}: invalid JSON ({exc.msg})") from exc
    for field in ("weights", "bias", "feature_version"):
        if field not in payload:
            raise DataFormatError(f"model file {path}: missing field {field}")
    if payload["feature_version"] != FEATURE_VERSION:
        raise DataFormatError(
            f"model file {path}: feature_version {payload['feature_version']} unsupported"
        )
    weights = np.asarray(payload["weights"], dtype=np.float64)
    if weights.shape != (FEATURE_DIM,):
        raise DataFormatError(f"model file {path}: expected {FEATURE_DIM} weights")
    weights.setflags(write=False)
    return SalienceModel(weights=weights, bias=float(payload["bias"]))


def sweep_thresholds(scores: Sequence[tuple[float, bool]]) -> list[PRPoint]:
    """PR point per distinct score plus the 0.0 / 1.0 endpoints, ascending.

    A mention is predicted salient when score >= threshold; the precision of
    an empty prediction set is defined as 1.0.
    """
    if not scores:
        raise ValueError("no scores to sweep")
    if not any(label for _, label in scores):
        raise ValueError("threshold sweep requires at least one positive label")
    for score, _ in scores:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")

    positives = sum(1 for _, label in scores if label)
    thresholds = sorted({0.0, 1.0, *(score for score, _ in scores)})
    points = []
    for threshold in thresholds:
        predicted = [label for score, label in scores if score >= threshold]
        true_positives = sum(1 for label in predicted if label)
        precision = 1.0 if not predicted else true_positives / len(predicted)
        points.append(
            PRPoint(threshold=threshold, precision=precision, recall=true_positives / positives)
        )
    return points


def write_pr_csv(points: Sequence[PRPoint], path: str | Path) -> None:
    lines = ["threshold,precision,recall"]
    lines += [f"{p.threshold},{p.precision},{p.recall}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
