"""Per-class adaptive confidence margins and the unlabeled-batch partition.

Class indices are 0-based throughout. Argmax ties resolve to the lowest
class index (``numpy.argmax`` already does this).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CorrectPrediction:
    sample_id: int
    predicted: int
    confidence: float


@dataclass
class ConfidenceMargin:
    """Raw per-class margins plus the epoch schedule constants.

    ``effective(t)`` ramps each raw margin from ``B*T/2`` at t=0 towards
    ``B*T`` as t grows.
    """

    raw: np.ndarray
    B: float = 0.97
    gamma: float = math.e
    epoch: int = 0
    initial: float = 0.8

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if not 0.0 < self.B < 1.0:
            raise ValueError(f"B must lie in (0, 1), got {self.B}")
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")

    @classmethod
    def initial_margin(cls, n_classes: int, B=0.97, gamma=math.e, initial=0.8) -> ConfidenceMargin:
        return cls(np.full(n_classes, float(initial)), B, gamma, 0, initial)

    @property
    def n_classes(self) -> int:
        return len(self.raw)

    def effective(self, epoch: int | None = None) -> np.ndarray:
        t = self.epoch if epoch is None else epoch
        return self.B * self.raw / (1.0 + self.gamma ** (-t))

    def updated(self, correct: list[CorrectPrediction], epoch: int) -> ConfidenceMargin:
        raw = compute_raw_margins(correct, self.n_classes, self.raw)
        return ConfidenceMargin(raw, self.B, self.gamma, epoch, self.initial)


@dataclass
class Partition:
    """Disjoint split of an unlabeled batch (positions within the batch)."""

    high: np.ndarray  # subset I positions
    pseudo: np.ndarray  # one-hot pseudo labels, (len(high), C)
    low: np.ndarray  # subset II positions
    n_classes: int
    discarded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_high(self) -> int:
        return len(self.high)

    @property
    def n_low(self) -> int:
        return len(self.low)

    @property
    def pseudo_classes(self) -> np.ndarray:
        return self.pseudo.argmax(axis=1) if len(self.pseudo) else np.zeros(0, dtype=np.int64)


def collect_correct(probs, labels) -> list[CorrectPrediction]:
    """Labeled samples whose argmax prediction equals their label."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = probs.argmax(axis=1)
    return [
        CorrectPrediction(int(i), int(pred[i]), float(probs[i, pred[i]]))
        for i in np.flatnonzero(pred == labels)
    ]


def compute_raw_margins(correct: list[CorrectPrediction], n_classes: int, fallback) -> np.ndarray:
    """Mean confidence of correct predictions per class.

    Classes without any correct prediction keep their ``fallback`` value.
    """
    total = np.zeros(n_classes)
    count = np.zeros(n_classes, dtype=np.int64)
    for entry in correct:
        total[entry.predicted] += entry.confidence
        count[entry.predicted] += 1
    fallback = np.broadcast_to(np.asarray(fallback, dtype=np.float64), (n_classes,))
    seen = count > 0
    return np.where(seen, total / np.maximum(count, 1), fallback)


def effective_margin(margin: ConfidenceMargin, c: int, t: int) -> float:
    if t < 0:
        raise ValueError("epoch must be non-negative")
    return float(margin.B * margin.raw[c] / (1.0 + margin.gamma ** (-t)))


def _split(avg_probs, thresholds) -> Partition:
    p = np.asarray(avg_probs, dtype=np.float64)
    n, c = p.shape if p.ndim == 2 else (0, len(np.atleast_1d(thresholds)))
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Partition(empty, np.zeros((0, c)), empty.copy(), c)
    cls = p.argmax(axis=1)
    conf = p[np.arange(n), cls]
    keep = conf >= np.asarray(thresholds)[cls]
    high = np.flatnonzero(keep)
    pseudo = np.zeros((len(high), c))
    pseudo[np.arange(len(high)), cls[high]] = 1.0
    return Partition(high, pseudo, np.flatnonzero(~keep), c)


def partition_batch(avg_probs, margin: ConfidenceMargin, epoch: int | None = None) -> Partition:
    """Subset I: ``max p >= margin[argmax p]`` (inclusive); the rest is subset II."""
    return _split(avg_probs, margin.effective(epoch))


def fixed_threshold_partition(avg_probs, threshold: float) -> Partition:
    """One threshold for every class; samples below it are discarded, not contrasted."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"fixed threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(avg_probs, dtype=np.float64)
    c = p.shape[1] if p.ndim == 2 else 0
    part = _split(p, np.full(max(c, 1), threshold))
    empty = np.zeros(0, dtype=np.int64)
    return Partition(part.high, part.pseudo, empty, part.n_classes, discarded=part.low)
