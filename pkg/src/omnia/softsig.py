"""Masked categorical + binary cross-entropy classification loss with
analytic gradients with respect to the logits.

Logit columns are ordered categories 1..C then background (C+1 columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax

from .assignment import BACKGROUND, RoiTarget
from .errors import ConfigError


@dataclass(frozen=True)
class LossBatch:
    logits: np.ndarray  # (R, C+1)
    targets: np.ndarray  # (R, C+1) one-hot rows
    masks: np.ndarray  # (R,) binary
    weights: np.ndarray  # (R, C+1) binary
    lambda_binary: float = 1.0

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        masks = np.asarray(self.masks, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "weights", weights)
        r, k = logits.shape
        if r < 1 or k < 2:
            raise ConfigError(f"need R >= 1 and C >= 1, got logits shape {logits.shape}")
        if targets.shape != logits.shape or weights.shape != logits.shape or masks.shape != (r,):
            raise ConfigError("mismatched batch array shapes")
        if not np.isfinite(logits).all():
            raise ConfigError("non-finite logits")
        if not np.allclose(targets.sum(axis=1), 1.0):
            raise ConfigError("each target row must be one-hot")
        if self.lambda_binary < 0:
            raise ConfigError("lambda_binary must be nonnegative")

    @property
    def n_rois(self) -> int:
        return self.logits.shape[0]

    @property
    def n_categories(self) -> int:
        return self.logits.shape[1] - 1


def categorical_loss(b: LossBatch) -> float:
    """Masked categorical cross-entropy, averaged over all R sampled ROIs."""
    log_probs = log_softmax(b.logits, axis=1)
    per_roi = -(b.targets * log_probs).sum(axis=1)
    return float((b.masks * per_roi).sum() / b.n_rois)


def binary_loss(b: LossBatch) -> float:
    """Per-category binary cross-entropy with binary weights, divided by
    R(C+1) regardless of how many terms the weights keep."""
    # t*log(sigmoid(x)) + (1-t)*log(1-sigmoid(x)), stabilized via log-sigmoid
    terms = b.targets * log_expit(b.logits) + (1.0 - b.targets) * log_expit(-b.logits)
    r, k = b.logits.shape
    return float(-(b.weights * terms).sum() / (r * k))


def softsig_loss(b: LossBatch) -> float:
    return categorical_loss(b) + b.lambda_binary * binary_loss(b)


def softsig_gradient(b: LossBatch) -> np.ndarray:
    """Analytic d(softsig_loss)/d(logits).

    Weighted-out entries (unsafe-matched category and background columns) are
    exactly zero, so only safe gradients propagate.
    """
    r, k = b.logits.shape
    grad_cat = b.masks[:, None] * (softmax(b.logits, axis=1) - b.targets) / r
    grad_bin = b.lambda_binary * b.weights * (expit(b.logits) - b.targets) / (r * k)
    return grad_cat + grad_bin


def batch_from_targets(
    roi_targets: list[RoiTarget],
    logits: np.ndarray,
    lambda_binary: float = 1.0,
) -> LossBatch:
    """Assemble a LossBatch from assignment output and a logit matrix."""
    r = len(roi_targets)
    logits = np.asarray(logits, dtype=float)
    if logits.shape[0] != r:
        raise ConfigError(f"logits rows ({logits.shape[0]}) != ROI count ({r})")
    k = logits.shape[1]
    targets = np.zeros((r, k))
    masks = np.zeros(r)
    weights = np.zeros((r, k))
    for i, t in enumerate(roi_targets):
        col = k - 1 if t.class_target == BACKGROUND else t.class_target - 1
        targets[i, col] = 1.0
        masks[i] = t.mask
        weights[i] = t.weights
    return LossBatch(logits, targets, masks, weights, lambda_binary)
