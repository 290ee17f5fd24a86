"""Readers and writers for MIND-style logs, sessions and negative sampling."""

from __future__ import annotations

import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .exceptions import DataFormatError, DuplicateIdError
from .models import BehaviorRecord, ContentItem, Impression, TrainExample, UserHistory

logger = logging.getLogger(__name__)

BEHAVIORS_FILE = "behaviors.tsv"
CATALOG_FILE = "catalog.tsv"


def stable_hash(*parts: object) -> int:
    """64-bit hash of the parts, stable across processes and platforms."""

    digest = hashlib.sha256("\x1f".join(str(part) for part in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def parse_behaviors(path: str | Path) -> List[BehaviorRecord]:
    """
    Parse ``impression_id, user_id, timestamp, history, candidates`` lines.

    The history field is chronological (oldest first); candidates are
    ``id-label`` tokens with a 0/1 label.
    """

    file_path = Path(path)
    if not file_path.exists():
        raise DataFormatError(file_path, None, "behaviors file not found")

    records: List[BehaviorRecord] = []
    with file_path.open("r", encoding="utf-8", newline="") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 5:
                raise DataFormatError(file_path, number, f"expected 5 columns, got {len(columns)}")
            impression_id, user_id, timestamp, history, candidates = columns
            if not impression_id or not user_id:
                raise DataFormatError(file_path, number, "impression and user ids are required")
            records.append(
                BehaviorRecord(
                    impression=Impression(
                        impression_id=impression_id,
                        user_id=user_id,
                        candidates=_parse_candidates(candidates, file_path, number),
                    ),
                    history=tuple(history.split()),
                    timestamp=timestamp,
                )
            )
    return records


def _parse_candidates(field: str, path: Path, number: int) -> Tuple[Tuple[str, int], ...]:
    parsed = []
    for token in field.split():
        content_id, sep, label = token.rpartition("-")
        if not sep or not content_id:
            raise DataFormatError(path, number, f"candidate {token!r} is not id-label")
        if label not in ("0", "1"):
            raise DataFormatError(path, number, f"label {label!r} of {content_id} is not 0 or 1")
        parsed.append((content_id, int(label)))
    if not parsed:
        raise DataFormatError(path, number, "impression has no candidates")
    return tuple(parsed)


def write_behaviors(records: Iterable[BehaviorRecord], path: str | Path) -> Path:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            impression = record.impression
            candidates = " ".join(f"{cid}-{label}" for cid, label in impression.candidates)
            handle.write(
                f"{impression.impression_id}\t{impression.user_id}\t{record.timestamp}\t"
                f"{' '.join(record.history)}\t{candidates}\n"
            )
    return file_path


def parse_catalog(path: str | Path) -> Dict[str, ContentItem]:
    """Parse ``id, title, abstract, category`` lines; ids must be unique."""

    file_path = Path(path)
    if not file_path.exists():
        raise DataFormatError(file_path, None, "catalog file not found")

    catalog: Dict[str, ContentItem] = {}
    with file_path.open("r", encoding="utf-8", newline="") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 4:
                raise DataFormatError(file_path, number, f"expected 4 columns, got {len(columns)}")
            content_id, title, abstract, category = columns
            if content_id in catalog:
                raise DuplicateIdError(file_path, number, f"duplicate content id {content_id}")
            try:
                catalog[content_id] = ContentItem(
                    id=content_id, title=title, abstract=abstract, category=category
                )
            except ValueError as exc:
                raise DataFormatError(file_path, number, str(exc)) from exc
    return catalog


def write_catalog(items: Iterable[ContentItem], path: str | Path) -> Path:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", encoding="utf-8", newline="\n") as handle:
        for item in items:
            fields = (item.id, item.title, item.abstract, item.category)
            handle.write("\t".join(_clean_field(value) for value in fields) + "\n")
    return file_path


def _clean_field(value: str) -> str:
    return " ".join(value.split())


def make_sessions(
    engaged: Sequence[str], session_size: int, enabled: bool = True
) -> List[List[str]]:
    """Contiguous groups of ``session_size`` contents, or singletons when disabled."""

    if session_size < 1:
        raise ValueError("session_size must be at least 1")
    size = session_size if enabled else 1
    return [list(engaged[start : start + size]) for start in range(0, len(engaged), size)]


def build_user_history(
    user_id: str,
    chronological: Sequence[str],
    *,
    history_cap: int,
    session_size: int,
    sessions_enabled: bool = True,
) -> UserHistory:
    """Most recent ``history_cap`` contents, newest first, grouped into sessions."""

    engaged = tuple(reversed(chronological))[:history_cap]
    sessions = make_sessions(engaged, session_size, sessions_enabled)
    return UserHistory(
        user_id=user_id, engaged=engaged, sessions=tuple(tuple(s) for s in sessions)
    )


def latest_histories(records: Iterable[BehaviorRecord]) -> Dict[str, Tuple[str, ...]]:
    """Each user's history as of their last behaviors line in file order."""

    histories: Dict[str, Tuple[str, ...]] = {}
    for record in records:
        histories[record.user_id] = record.history
    return histories


def sample_negatives(impression: Impression, negatives: int, seed: int) -> List[TrainExample]:
    """
    One example per clicked candidate with ``negatives`` non-clicked ids from
    the same impression; drawn with replacement only when too few exist.
    """

    if negatives < 1:
        raise ValueError("negatives must be at least 1")
    pool = impression.negatives
    if not pool:
        return []
    examples = []
    for positive in impression.positives:
        rng = np.random.default_rng([seed, stable_hash(impression.impression_id, positive)])
        if len(pool) >= negatives:
            chosen = rng.choice(len(pool), size=negatives, replace=False)
        else:
            chosen = rng.choice(len(pool), size=negatives, replace=True)
        examples.append(
            TrainExample(
                user_id=impression.user_id,
                positive=positive,
                negatives=tuple(pool[index] for index in chosen.tolist()),
                impression_id=impression.impression_id,
            )
        )
    return examples


def build_train_examples(
    impressions: Iterable[Impression], negatives: int, seed: int
) -> Tuple[List[TrainExample], int]:
    """Sample every impression; returns the examples and how many impressions were skipped."""

    examples: List[TrainExample] = []
    skipped = 0
    for impression in impressions:
        if not impression.negatives or not impression.positives:
            skipped += 1
            continue
        examples.extend(sample_negatives(impression, negatives, seed))
    if skipped:
        logger.warning("skipped %d impressions without both clicked and non-clicked candidates", skipped)
    return examples, skipped


def split_impressions(
    records: Sequence[BehaviorRecord], dev_fraction: float, seed: int
) -> Tuple[List[BehaviorRecord], List[BehaviorRecord]]:
    """Deterministic train/dev split keyed by a seeded hash of the impression id."""

    if not 0.0 <= dev_fraction < 1.0:
        raise ValueError("dev_fraction must be in [0, 1)")
    threshold = int(dev_fraction * 2**64)
    train: List[BehaviorRecord] = []
    dev: List[BehaviorRecord] = []
    for record in records:
        bucket = stable_hash(seed, "split", record.impression.impression_id)
        (dev if bucket < threshold else train).append(record)
    return train, dev


@dataclass(frozen=True)
class Rating:
    user_id: str
    content_id: str
    rating: float
    timestamp: str


def parse_ratings(path: str | Path) -> List[Rating]:
    """Parse ``user_id, content_id, rating, timestamp`` lines of a ratings log."""

    file_path = Path(path)
    if not file_path.exists():
        raise DataFormatError(file_path, None, "ratings file not found")
    ratings = []
    with file_path.open("r", encoding="utf-8", newline="") as handle:
        for number, line in enumerate(handle, start=1):
            columns = line.rstrip("\n").split("\t")
            if not line.strip():
                continue
            if len(columns) != 4:
                raise DataFormatError(file_path, number, f"expected 4 columns, got {len(columns)}")
            try:
                value = float(columns[2])
            except ValueError as exc:
                raise DataFormatError(file_path, number, f"rating {columns[2]!r} is not numeric") from exc
            ratings.append(Rating(columns[0], columns[1], value, columns[3]))
    return ratings


def ratings_to_behaviors(
    ratings: Iterable[Rating], impression_size: int = 10
) -> Tuple[List[BehaviorRecord], int]:
    """
    Convert explicit ratings into behaviors records.

    Ratings above 3 are positives and below 3 negatives; ratings of exactly 3
    are dropped and counted. Per user, the most recent ``impression_size``
    labelled ratings form one impression and earlier positives the history.
    """

    by_user: Mapping[str, List[Tuple[int, Rating]]] = defaultdict(list)
    dropped = 0
    for order, rating in enumerate(ratings):
        if rating.rating == 3:
            dropped += 1
            continue
        by_user[rating.user_id].append((order, rating))
    if dropped:
        logger.warning("dropped %d ratings equal to 3", dropped)

    records: List[BehaviorRecord] = []
    for user_id in sorted(by_user):
        ordered = [r for _, r in sorted(by_user[user_id], key=lambda pair: (pair[1].timestamp, pair[0]))]
        recent, earlier = ordered[-impression_size:], ordered[:-impression_size]
        candidates = tuple((r.content_id, int(r.rating > 3)) for r in recent)
        history = tuple(r.content_id for r in earlier if r.rating > 3)
        records.append(
            BehaviorRecord(
                impression=Impression(
                    impression_id=f"{user_id}-{len(records)}", user_id=user_id, candidates=candidates
                ),
                history=history,
                timestamp=recent[-1].timestamp,
            )
        )
    return records, dropped


__all__ = [
    "BEHAVIORS_FILE",
    "CATALOG_FILE",
    "Rating",
    "build_train_examples",
    "build_user_history",
    "latest_histories",
    "make_sessions",
    "parse_behaviors",
    "parse_catalog",
    "parse_ratings",
    "ratings_to_behaviors",
    "sample_negatives",
    "split_impressions",
    "stable_hash",
    "write_behaviors",
    "write_catalog",
]
