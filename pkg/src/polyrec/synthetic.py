"""Seeded desk-scale dataset with planted category preferences."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .config import SynthConfig
from .dataio import BEHAVIORS_FILE, CATALOG_FILE, write_behaviors, write_catalog
from .models import BehaviorRecord, ContentItem, Impression

logger = logging.getLogger(__name__)

PREFERENCES_FILE = "preferences.tsv"

CATEGORY_NAMES = (
    "sports", "tech", "finance", "health", "travel", "food", "music", "science",
    "politics", "autos", "weather", "movies", "gaming", "fashion", "education", "lifestyle",
)
COMMON_WORDS = (
    "the", "new", "report", "today", "week", "people", "first", "latest", "story",
    "update", "major", "local", "after", "big", "how", "why",
)
WORDS_PER_CATEGORY = 24
HISTORY_SIGNAL = 0.9
BASE_TIME = dt.datetime(2019, 11, 9, 0, 0, 0)


@dataclass(frozen=True)
class SyntheticDataset:
    catalog_path: Path
    behaviors_path: Path
    preferences_path: Path
    preferences: Dict[str, Tuple[str, ...]]


def category_names(count: int) -> List[str]:
    names = list(CATEGORY_NAMES[:count])
    names.extend(f"topic{index}" for index in range(len(names), count))
    return names


def bayes_optimal_auc(label_noise: float) -> float:
    """
    AUC of scoring a candidate 1 when its category is preferred, on slates
    drawn half from preferred categories with labels flipped at ``label_noise``.
    """

    return 1.0 - label_noise


def _item_text(rng: np.random.Generator, category: str) -> Tuple[str, str]:
    topical = [f"{category}{index}" for index in range(WORDS_PER_CATEGORY)]
    title = [*rng.choice(topical, size=3).tolist(), *rng.choice(COMMON_WORDS, size=2).tolist()]
    abstract = [*rng.choice(topical, size=5).tolist(), *rng.choice(COMMON_WORDS, size=5).tolist()]
    rng.shuffle(title)
    rng.shuffle(abstract)
    return " ".join(title).capitalize(), " ".join(abstract).capitalize() + "."


def generate_synthetic(config: SynthConfig, out_dir: str | Path) -> SyntheticDataset:
    """
    Write ``catalog.tsv``, ``behaviors.tsv`` and ``preferences.tsv``.

    Every user prefers a few categories; histories are drawn from them 90%
    of the time; a candidate is clicked iff its category is preferred,
    with labels flipped at ``label_noise``. Output is byte-identical per seed.
    """

    for name in ("n_users", "n_items", "n_categories", "history_len", "candidates_per_impression"):
        if getattr(config, name) < 1:
            raise ValueError(f"{name} must be at least 1")
    rng = np.random.default_rng(config.seed)
    names = category_names(config.n_categories)

    items: List[ContentItem] = []
    item_category = np.empty(config.n_items, dtype=np.int64)
    for index in range(config.n_items):
        category = int(index % config.n_categories) if index < config.n_categories else int(
            rng.integers(config.n_categories)
        )
        item_category[index] = category
        title, abstract = _item_text(rng, names[category])
        items.append(ContentItem(id=f"N{index}", title=title, abstract=abstract, category=names[category]))

    by_category = [np.flatnonzero(item_category == c) for c in range(config.n_categories)]
    preferred_count = max(1, config.n_categories // 4)

    records: List[BehaviorRecord] = []
    preferences: Dict[str, Tuple[str, ...]] = {}
    for user in range(config.n_users):
        user_id = f"U{user}"
        liked = np.sort(rng.choice(config.n_categories, size=preferred_count, replace=False))
        preferences[user_id] = tuple(names[c] for c in liked.tolist())
        liked_pool = np.concatenate([by_category[c] for c in liked.tolist()])
        other_pool = np.setdiff1d(np.arange(config.n_items), liked_pool)

        history = []
        for _ in range(config.history_len):
            source = liked_pool if rng.random() < HISTORY_SIGNAL or other_pool.size == 0 else other_pool
            history.append(f"N{int(rng.choice(source))}")

        for _ in range(config.impressions_per_user):
            wanted = int(rng.binomial(config.candidates_per_impression, 0.5))
            if other_pool.size == 0:
                wanted = config.candidates_per_impression
            wanted = min(wanted, liked_pool.size)
            rest = min(config.candidates_per_impression - wanted, other_pool.size)
            chosen = np.concatenate(
                [
                    rng.choice(liked_pool, size=wanted, replace=False),
                    rng.choice(other_pool, size=rest, replace=False) if rest else np.empty(0, np.int64),
                ]
            ).astype(np.int64)
            rng.shuffle(chosen)
            liked_set = set(liked.tolist())
            candidates = []
            for item in chosen.tolist():
                label = int(int(item_category[item]) in liked_set)
                if rng.random() < config.label_noise:
                    label = 1 - label
                candidates.append((f"N{item}", label))
            stamp = BASE_TIME + dt.timedelta(minutes=len(records))
            records.append(
                BehaviorRecord(
                    impression=Impression(
                        impression_id=str(len(records) + 1), user_id=user_id, candidates=tuple(candidates)
                    ),
                    history=tuple(history),
                    timestamp=stamp.strftime("%m/%d/%Y %I:%M:%S %p"),
                )
            )

    out = Path(out_dir)
    catalog_path = write_catalog(items, out / CATALOG_FILE)
    behaviors_path = write_behaviors(records, out / BEHAVIORS_FILE)
    preferences_path = out / PREFERENCES_FILE
    with preferences_path.open("w", encoding="utf-8", newline="\n") as handle:
        for user_id, liked_names in preferences.items():
            handle.write(f"{user_id}\t{','.join(liked_names)}\n")
    logger.info(
        "wrote %d items and %d impressions for %d users to %s",
        len(items), len(records), config.n_users, out,
    )
    return SyntheticDataset(
        catalog_path=catalog_path,
        behaviors_path=behaviors_path,
        preferences_path=preferences_path,
        preferences=preferences,
    )


def read_preferences(path: str | Path) -> Dict[str, Tuple[str, ...]]:
    preferences: Dict[str, Tuple[str, ...]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            user_id, names = line.split("\t")
            preferences[user_id] = tuple(name for name in names.split(",") if name)
    return preferences


__all__ = [
    "SyntheticDataset",
    "bayes_optimal_auc",
    "category_names",
    "generate_synthetic",
    "read_preferences",
]
