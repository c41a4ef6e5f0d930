from __future__ import annotations

import numpy as np
from django.core.exceptions import ValidationError

from ..exceptions import NumericalError, ShapeError


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean of -log softmax(logits)[label] over the batch, with its logit gradient.

    ``labels`` are zero-based class indices. A single logit vector with a
    scalar label is accepted as a batch of one.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"Expected {logits.shape[0]} labels, got {labels.shape}")
    classes = logits.shape[1]
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValidationError({"label": f"Labels must lie in [0, {classes - 1}]."})
    labels = labels.astype(int)
    log_probs = _log_softmax(logits)
    rows = np.arange(len(labels))
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= len(labels)
    if not np.isfinite(loss):
        raise NumericalError("Non-finite cross-entropy loss")
    return loss, grad[0] if single else grad


def mse_loss(reconstruction: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Mean over (valid) elements of half the squared error, with its gradient.

    A (batch, time) mask restricts the mean to valid steps of padded sequences.
    """
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if reconstruction.shape != target.shape:
        raise ShapeError(f"Reconstruction {reconstruction.shape} does not match target {target.shape}")
    diff = reconstruction - target
    if mask is None:
        weights = np.ones_like(diff)
    else:
        weights = np.broadcast_to(np.asarray(mask, dtype=np.float64)[..., None], diff.shape)
    count = weights.sum()
    if count == 0:
        raise ShapeError("The mask leaves no elements to compare")
    loss = float(0.5 * (weights * diff**2).sum() / count)
    if not np.isfinite(loss):
        raise NumericalError("Non-finite reconstruction loss")
    return loss, weights * diff / count
