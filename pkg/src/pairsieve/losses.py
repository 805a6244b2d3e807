"""Loss functions: stable binary cross-entropy on logits and a hardest-
negative triplet loss over a batch similarity matrix."""

from __future__ import annotations

import numpy as np


class LossError(ValueError):
    """Invalid labels or shapes handed to a loss."""


def sigmoid(x):
    """Numerically stable logistic, elementwise."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


def bce_loss(y, f):
    """Binary cross-entropy of label y under logit f.

    Computed as softplus(f) - y*f, which equals
    -[y*log(sigma(f)) + (1-y)*log(1-sigma(f))] but never overflows.
    """
    y_arr = np.asarray(y, dtype=float)
    if not np.all((y_arr == 0.0) | (y_arr == 1.0)):
        raise LossError(f"labels must be 0 or 1, got {y!r}")
    out = softplus(f) - y_arr * np.asarray(f, dtype=float)
    return out if out.ndim else float(out)


def adversarial_loss(f):
    """Loss pushing logit f toward 'mismatched': bce_loss(0, f) = softplus(f)."""
    out = softplus(f)
    return out if np.ndim(out) else float(out)


def triplet_batch_loss(sim, margin):
    """Hardest-negative triplet loss over a square similarity matrix.

    sim[i, j] scores sentence i against clip j; diagonal entries are the
    matched pairs. For each anchor the single hardest negative in its row
    and in its column is hinged against the diagonal, and the hinges are
    averaged over anchors.
    """
    sim = np.asarray(sim, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise LossError(f"similarity matrix must be square, got shape {sim.shape}")
    n = sim.shape[0]
    if n < 2:
        raise LossError("triplet loss needs at least 2 items")
    if margin < 0:
        raise LossError("margin must be >= 0")
    pos = np.diag(sim)
    off = sim.copy()
    np.fill_diagonal(off, -np.inf)
    hardest_row = off.max(axis=1)  # best wrong clip for each sentence
    hardest_col = off.max(axis=0)  # best wrong sentence for each clip
    row_hinge = np.maximum(0.0, margin + hardest_row - pos)
    col_hinge = np.maximum(0.0, margin + hardest_col - pos)
    return float((row_hinge + col_hinge).mean())
