"""Per-impression ranking metrics.

Conventions: AUC gives tied pairs half credit; MRR and nDCG rank by
descending score with ties kept in original candidate order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.metrics import roc_auc_score

from .exceptions import UndefinedMetricError


@dataclass(frozen=True)
class RankedImpression:
    scores: Sequence[float]
    labels: Sequence[int]

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels differ in length")


def _arrays(scores: Sequence[float], labels: Sequence[int]):
    y_score = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(labels, dtype=np.int64)
    if y_score.shape != y_true.shape:
        raise ValueError("scores and labels differ in length")
    return y_score, y_true


def _ranking(y_score: np.ndarray) -> np.ndarray:
    return np.argsort(-y_score, kind="stable")


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    y_score, y_true = _arrays(scores, labels)
    positives = int(y_true.sum())
    if positives == 0 or positives == y_true.size:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    return float(roc_auc_score(y_true, y_score))


def mrr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mean over clicked candidates of ``1 / rank``."""

    y_score, y_true = _arrays(scores, labels)
    if y_true.sum() == 0:
        raise UndefinedMetricError("MRR needs at least one positive")
    ordered = y_true[_ranking(y_score)]
    reciprocal = ordered / np.arange(1, ordered.size + 1)
    return float(reciprocal.sum() / ordered.sum())


def ndcg_at_k(scores: Sequence[float], labels: Sequence[int], k: int = 10) -> float:
    y_score, y_true = _arrays(scores, labels)
    if y_true.sum() == 0:
        raise UndefinedMetricError("nDCG needs at least one positive")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    gains = y_true[_ranking(y_score)][:k]
    dcg = float((gains * discounts[: gains.size]).sum())
    ideal_hits = min(int(y_true.sum()), k)
    idcg = float(discounts[:ideal_hits].sum())
    return dcg / idcg


def mean(values: Sequence[float]) -> float:
    """Order-independent mean (exactly rounded sum)."""

    return math.fsum(values) / len(values) if values else float("nan")


__all__ = ["RankedImpression", "auc", "mean", "mrr", "ndcg_at_k"]
