"""Softmax cross-entropy and the convolutional L2 penalty."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def softmax(logits):
    """Numerically stable (max-subtracted) row softmax."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log probability of the true class.

    Returns (loss, probabilities). The loss is computed through log-sum-exp,
    so it stays finite even where a probability underflows.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} do not conform")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in 0..{c - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    log_p_true = shifted[np.arange(n), labels] - np.log(z[:, 0])
    loss = float(-log_p_true.mean())
    return loss, probs


def softmax_cross_entropy_grad(probs, labels):
    """Gradient of the mean cross-entropy with respect to the logits."""
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d / n


def l2_penalty(weights, lam):
    """lam times the sum of squared weights over the given tensors."""
    if lam < 0:
        raise ValueError(f"l2 lambda must be >= 0, got {lam}")
    if lam == 0:
        return 0.0
    return float(lam) * float(sum(np.square(w, dtype=np.float64).sum() for w in weights))
