"""Evaluation and analysis metrics.

Top-1 accuracy, the partial-participation update discrepancy, linear CKA
representation similarity, and the training-dynamics statistics used to
summarize a run (first-order accuracy differences, trailing moving average).
All functions are pure.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor_nn import ModelParams, forward

log = logging.getLogger(__name__)

DISCREPANCY_EPS = 1e-12


def top1_accuracy(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Percent of samples whose argmax logit matches the label.

    Ties break toward the lowest class index, making the value independent
    of the implementation's iteration order.
    """
    if features.shape[0] == 0:
        raise ConfigError("cannot evaluate accuracy on an empty test set")
    logits = forward(model, features)
    predicted = logits.argmax(axis=1)
    return float((predicted == np.asarray(labels)).mean() * 100.0)


def _flatten(tensors) -> np.ndarray:
    return np.concatenate([np.asarray(t).ravel() for t in tensors])


def update_discrepancy(true_tensors, partial_tensors) -> float:
    """Relative L2 distance between the partial and full-participation updates."""
    t = _flatten(true_tensors)
    p = _flatten(partial_tensors)
    if t.shape != p.shape:
        raise ConfigError("update tensors do not match in total size")
    return float(np.linalg.norm(p - t) / (np.linalg.norm(t) + DISCREPANCY_EPS))


def one_minus_cosine(true_tensors, partial_tensors) -> float:
    """Secondary discrepancy metric: 1 - cos(angle between the two updates)."""
    t = _flatten(true_tensors)
    p = _flatten(partial_tensors)
    denom = np.linalg.norm(t) * np.linalg.norm(p)
    if denom == 0.0:
        return 0.0
    return float(1.0 - (t @ p) / denom)


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear centered-kernel-alignment similarity between activation matrices.

    Rows are samples, columns are features; columns are centered internally.
    Invariant to orthogonal transforms and isotropic scaling of either input;
    returns a value in [0, 1], with 1 for identical representations. Inputs
    without any variance are defined to score 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ConfigError("activation matrices need the same row count >= 2")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    denom_x = np.linalg.norm(xc.T @ xc, "fro")
    denom_y = np.linalg.norm(yc.T @ yc, "fro")
    if denom_x == 0.0 or denom_y == 0.0:
        log.warning("linear_cka: zero-variance input, returning 0")
        return 0.0
    num = np.linalg.norm(xc.T @ yc, "fro") ** 2
    return float(num / (denom_x * denom_y))


@dataclass
class FirstOrderStats:
    mean: float
    std: float
    min: float


def first_order_stats(values) -> FirstOrderStats:
    """Mean/std/min of one-step differences of a raw (unsmoothed) series."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ConfigError("need at least two points to difference a series")
    diffs = np.diff(values)
    return FirstOrderStats(
        mean=float(diffs.mean()),
        std=float(diffs.std()),
        min=float(diffs.min()),
    )


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over the last ``min(window, t+1)`` points."""
    if window < 1:
        raise ConfigError(f"smoothing window must be >= 1, got {window}")
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    csum = np.cumsum(values)
    for t in range(values.size):
        lo = max(0, t - window + 1)
        total = csum[t] - (csum[lo - 1] if lo > 0 else 0.0)
        out[t] = total / (t - lo + 1)
    return out


@dataclass
class AccuracySeries:
    """Per-round accuracy values (percent) with a reporting-time smoother."""

    values: np.ndarray
    window: int = 10

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.window < 1:
            raise ConfigError(f"smoothing window must be >= 1, got {self.window}")

    def smoothed(self) -> np.ndarray:
        return moving_average(self.values, self.window)

    def stats(self) -> FirstOrderStats:
        return first_order_stats(self.values)
