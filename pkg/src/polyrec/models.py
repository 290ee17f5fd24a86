"""Plain data records shared across parsing, featurisation and training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple


@dataclass(frozen=True)
class ContentItem:
    """One recommendable piece of text content."""

    id: str
    title: str
    abstract: str = ""
    category: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("content id must be nonempty")
        if not self.title:
            raise ValueError(f"content {self.id} has an empty title")


@dataclass(frozen=True)
class Impression:
    """One served slate: a user, candidate ids and binary engagement labels."""

    impression_id: str
    user_id: str
    candidates: Tuple[Tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError(f"impression {self.impression_id} has no candidates")
        for content_id, label in self.candidates:
            if label not in (0, 1):
                raise ValueError(f"label {label!r} for {content_id} is not binary")

    @property
    def candidate_ids(self) -> List[str]:
        return [content_id for content_id, _ in self.candidates]

    @property
    def labels(self) -> List[int]:
        return [label for _, label in self.candidates]

    @property
    def positives(self) -> List[str]:
        return [content_id for content_id, label in self.candidates if label == 1]

    @property
    def negatives(self) -> List[str]:
        return [content_id for content_id, label in self.candidates if label == 0]


@dataclass(frozen=True)
class BehaviorRecord:
    """A parsed behaviors line: the raw (chronological) history plus the impression."""

    impression: Impression
    history: Tuple[str, ...] = ()
    timestamp: str = ""

    @property
    def user_id(self) -> str:
        return self.impression.user_id


@dataclass(frozen=True)
class UserHistory:
    """Engaged content ids, most recent first, grouped into sessions."""

    user_id: str
    engaged: Tuple[str, ...]
    sessions: Tuple[Tuple[str, ...], ...]

    def __post_init__(self) -> None:
        flattened = tuple(content_id for session in self.sessions for content_id in session)
        if flattened != self.engaged:
            raise ValueError(f"sessions of {self.user_id} do not cover its history in order")


@dataclass(frozen=True)
class TrainExample:
    user_id: str
    positive: str
    negatives: Tuple[str, ...]
    impression_id: str = ""


@dataclass(frozen=True)
class EvalReport:
    """Macro-averaged ranking metrics over a set of impressions."""

    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int
    step: int = 0
    skipped_auc: int = 0
    extra: Dict[str, Any] = field(default_factory=dict, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "step": self.step,
            "auc": self.auc,
            "mrr": self.mrr,
            "ndcg5": self.ndcg5,
            "ndcg10": self.ndcg10,
            "n_impressions": self.n_impressions,
            "skipped_auc": self.skipped_auc,
        }
        data.update(self.extra)
        return data

    def progress_line(self) -> str:
        return f"{self.step} {self.auc:.4f} {self.mrr:.4f} {self.ndcg5:.4f} {self.ndcg10:.4f}"


__all__ = [
    "BehaviorRecord",
    "ContentItem",
    "EvalReport",
    "Impression",
    "TrainExample",
    "UserHistory",
]
