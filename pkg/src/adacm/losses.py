"""Objective terms: supervised and pseudo-label cross-entropy, the two-view
average distribution, cosine similarity, the subset-II contrastive loss and
the weighted total.

Every loss accepts plain arrays or recorded :class:`~adacm.nn.Tensor` values
and returns a scalar Tensor, so the same code serves tests and training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor

LOG_CLAMP = 1e-12


class AlignmentError(ValueError):
    """Paired inputs have mismatched lengths."""


class DegenerateEmbeddingError(ValueError):
    """An embedding vector has zero norm."""


@dataclass(frozen=True)
class LossWeights:
    lam1: float = 0.5
    lam2: float = 1.0
    lam3: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        for name in ("lam1", "lam2", "lam3"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


def _zero() -> Tensor:
    return Tensor(0.0)


def _cross_entropy(probs, targets) -> Tensor:
    probs = nn.as_tensor(probs)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape[0] != targets.shape[0]:
        raise AlignmentError(f"{probs.shape[0]} prediction rows vs {targets.shape[0]} label rows")
    n = probs.shape[0]
    if n == 0:
        return _zero()
    logp = nn.log(probs, clamp=LOG_CLAMP)
    return nn.reduce_sum(nn.mul(logp, targets)) * (-1.0 / n)


def supervised_ce(probs, onehot) -> Tensor:
    """Mean cross-entropy of labeled predictions against one-hot labels."""
    return _cross_entropy(probs, onehot)


def unsupervised_ce(strong_probs, pseudo) -> Tensor:
    """Cross-entropy of strong-view predictions against hard pseudo labels.

    Zero (and gradient-free) for an empty subset.
    """
    return _cross_entropy(strong_probs, pseudo)


def average_distribution(p_a, p_b):
    if isinstance(p_a, Tensor) or isinstance(p_b, Tensor):
        a, b = nn.as_tensor(p_a), nn.as_tensor(p_b)
        if a.shape != b.shape:
            raise AlignmentError(f"shapes {a.shape} and {b.shape} differ")
        return (a + b) * 0.5
    a = np.asarray(p_a, dtype=np.float64)
    b = np.asarray(p_b, dtype=np.float64)
    if a.shape != b.shape:
        raise AlignmentError(f"shapes {a.shape} and {b.shape} differ")
    return 0.5 * (a + b)


def _check_norms(*arrays):
    for arr in arrays:
        arr = np.atleast_2d(arr)
        if arr.size and np.any(np.linalg.norm(arr, axis=-1) == 0.0):
            raise DegenerateEmbeddingError("zero-norm embedding vector")


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_norms(u, v)
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def _normalize_rows(e: Tensor) -> Tensor:
    norms = nn.sqrt(nn.reduce_sum(nn.mul(e, e), axis=1, keepdims=True))
    return e / norms


def contrastive_loss(e_a, e_b, tau: float = 0.1) -> Tensor:
    """One-sided InfoNCE over subset II, anchored on the first weak view.

    For anchor i the positive is (a_i, b_i); the denominator sums the other
    a-view features (j != i) and every b-view feature including b_i.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    e_a, e_b = nn.as_tensor(e_a), nn.as_tensor(e_b)
    if e_a.shape[0] != e_b.shape[0]:
        raise AlignmentError(f"{e_a.shape[0]} anchors vs {e_b.shape[0]} positives")
    n = e_a.shape[0]
    if n == 0:
        return _zero()
    _check_norms(e_a.data, e_b.data)
    za, zb = _normalize_rows(e_a), _normalize_rows(e_b)
    s_aa = nn.matmul(za, nn.transpose(za)) * (1.0 / tau)
    s_ab = nn.matmul(za, nn.transpose(zb)) * (1.0 / tau)
    logits = nn.concat([s_aa, s_ab], axis=1)
    mask = np.ones((n, 2 * n), dtype=bool)
    mask[np.arange(n), np.arange(n)] = False
    positives = nn.take(s_ab, (np.arange(n), np.arange(n)))
    per_anchor = nn.logsumexp(logits, axis=1, mask=mask) - positives
    return nn.mean(per_anchor)


def total_loss(l_s, l_u, l_c, weights: LossWeights = LossWeights()) -> Tensor:
    return (
        nn.mul(nn.as_tensor(l_s), weights.lam1)
        + nn.mul(nn.as_tensor(l_u), weights.lam2)
        + nn.mul(nn.as_tensor(l_c), weights.lam3)
    )
