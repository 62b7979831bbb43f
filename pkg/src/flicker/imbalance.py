"""Imbalance metrics, similarity helpers and classification reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, UndefinedMetric


@dataclass(frozen=True)
class LabelDistribution:
    """Per-class sample counts held by one client (or summed over clients)."""

    counts: tuple[int, ...]

    def __init__(self, counts: Iterable[int]):
        c = tuple(int(x) for x in counts)
        if len(c) < 2:
            raise ValueError("a label distribution needs at least two classes")
        if any(x < 0 for x in c):
            raise ValueError(f"negative class count in {c}")
        object.__setattr__(self, "counts", c)

    def __len__(self) -> int:
        return len(self.counts)

    def __iter__(self):
        return iter(self.counts)

    def __getitem__(self, j):
        return self.counts[j]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_list(self) -> list[int]:
        return list(self.counts)


@dataclass(frozen=True)
class ImbalanceThresholds:
    server_threshold: float = 0.1
    client_threshold: float = 0.05
    max_rounds_per_client: int = 10

    def __post_init__(self):
        if not 0 < self.client_threshold <= self.server_threshold < 1:
            raise ConfigError(
                "thresholds must satisfy 0 < client_threshold <= server_threshold < 1, got "
                f"client={self.client_threshold}, server={self.server_threshold}"
            )
        if self.max_rounds_per_client < 1:
            raise ConfigError("max_rounds_per_client must be positive")


def _counts(ld) -> np.ndarray:
    if isinstance(ld, LabelDistribution):
        return ld.as_array()
    return np.asarray(ld)


def local_imbalance(ld) -> float:
    """min/max class-count ratio of one distribution."""
    c = _counts(ld)
    if c.size == 0 or c.max() <= 0:
        raise UndefinedMetric("imbalance is undefined for an all-zero distribution")
    return float(c.min()) / float(c.max())


# The global metric is the same ratio on the summed distribution.
global_imbalance = local_imbalance


def global_distribution(lds: Sequence) -> LabelDistribution:
    if not lds:
        raise ValueError("need at least one distribution")
    lengths = {len(ld) for ld in lds}
    if len(lengths) != 1:
        raise ValueError(f"distributions have different class counts: {sorted(lengths)}")
    return LabelDistribution(np.sum([_counts(ld) for ld in lds], axis=0))


def normalize(v) -> np.ndarray:
    x = np.asarray(_counts(v), dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0:
        raise UndefinedMetric("cannot normalize a zero vector")
    return x / norm


def cosine_similarity(u, v) -> float:
    a = np.asarray(_counts(u), dtype=np.float64)
    b = np.asarray(_counts(v), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors differ in length")
    return float(np.dot(normalize(a), normalize(b)))


def normalized_accuracy(accuracy: float, x_total: int, y_total: int) -> float:
    """Accuracy discounted by the augmentation overhead Y/X (never rewarded below 1)."""
    if x_total <= 0:
        raise ValueError("pre-correction sample total must be positive")
    if y_total < 0:
        raise ValueError("post-correction sample total must be non-negative")
    return accuracy / max(1.0, y_total / x_total)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


def classification_report(confusion) -> list[ClassMetrics]:
    """Per-class precision/recall/F1 from a confusion matrix (rows = true class).

    Any ratio with a zero denominator is reported as 0.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if (cm < 0).any():
        raise ValueError("confusion entries must be non-negative")
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    out = []
    for j in range(len(tp)):
        p = tp[j] / predicted[j] if predicted[j] else 0.0
        r = tp[j] / actual[j] if actual[j] else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append(ClassMetrics(float(p), float(r), float(f)))
    return out


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def round_half_away(x: float) -> int:
    """Nearest integer, ties away from zero."""
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


def report_value(x: float) -> float:
    """Reported metrics carry four decimals."""
    return round(float(x), 4)
