"""Numerical verification of the analytic loss gradient."""

from __future__ import annotations

import numpy as np

from .softsig import LossBatch, softsig_loss


def random_batch(rng: np.random.Generator, max_rois: int = 8, max_categories: int = 5) -> LossBatch:
    """A random batch whose masks/weights respect the ROI-target invariants:
    rows are either fully supervised or unsafe-matched."""
    r = int(rng.integers(1, max_rois + 1))
    c = int(rng.integers(1, max_categories + 1))
    logits = rng.normal(0.0, 2.0, size=(r, c + 1))
    targets = np.zeros((r, c + 1))
    masks = np.ones(r)
    weights = np.ones((r, c + 1))
    for i in range(r):
        if rng.uniform() < 0.4:  # unsafe-matched row
            matched = int(rng.integers(c))
            targets[i, c] = 1.0  # background bookkeeping target
            masks[i] = 0.0
            weights[i, matched] = 0.0
            weights[i, c] = 0.0
        else:
            targets[i, int(rng.integers(c + 1))] = 1.0
    return LossBatch(logits, targets, masks, weights, lambda_binary=1.0)


def central_difference_gradient(batch: LossBatch, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(batch.logits)
    base = batch.logits
    for idx in np.ndindex(*base.shape):
        bump = np.zeros_like(base)
        bump[idx] = h
        plus = LossBatch(base + bump, batch.targets, batch.masks, batch.weights, batch.lambda_binary)
        minus = LossBatch(base - bump, batch.targets, batch.masks, batch.weights, batch.lambda_binary)
        grad[idx] = (softsig_loss(plus) - softsig_loss(minus)) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max())
