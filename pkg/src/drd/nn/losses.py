"""Softmax cross-entropy losses.

Both losses take logits with the class axis at position 1 and integer
targets without that axis, and return ``(loss, dlogits)`` where the gradient
already includes the mean over positions. Works for dense maps
(N, C, H, W)/(N, H, W) and plain heads (N, C)/(N,).
"""

from __future__ import annotations

import numpy as np


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _one_hot_like(logits, targets):
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, np.expand_dims(targets, 1), 1.0, axis=1)
    return onehot


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over every position; grad is (softmax - onehot)/T."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError("target shape must be logits shape without the class axis")
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, np.expand_dims(targets, 1), axis=1)
    total = targets.size
    loss = -float(picked.sum()) / total
    grad = (np.exp(logp) - _one_hot_like(logits, targets)) / total
    return loss, grad.astype(logits.dtype)


def class_balanced_cross_entropy(logits, targets):
    """Cross-entropy reweighted by inverse in-batch class frequency.

    Position i with class t_i gets weight w_{t_i} = T / (C * T_{t_i}), where
    T is the number of positions and T_c the count of class c, so a rare
    target class is not drowned out by the empty background. Classes absent
    from the batch contribute nothing.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError("target shape must be logits shape without the class axis")
    n_classes = logits.shape[1]
    total = targets.size
    counts = np.bincount(targets.ravel(), minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = total / (n_classes * counts[present])
    w_map = weights[targets]
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, np.expand_dims(targets, 1), axis=1)[:, 0]
    loss = -float((w_map * picked).sum()) / total
    grad = (np.exp(logp) - _one_hot_like(logits, targets)) * np.expand_dims(w_map, 1) / total
    return loss, grad.astype(logits.dtype)
