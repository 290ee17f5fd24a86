"""Turn catalog items and user histories into encoder-ready token sequences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .config import AblationFlags, TextConfig
from .dataio import BEHAVIORS_FILE, CATALOG_FILE, build_user_history, parse_behaviors, parse_catalog
from .encoder import SessionBatch
from .exceptions import EmptyHistoryError, UnknownIdError
from .models import BehaviorRecord, ContentItem
from .textprep import (
    Vocabulary,
    build_history_sequence,
    build_vocabulary,
    item_token_ids,
    render_template,
    tokenize,
    wrap,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UserInput:
    """Wrapped session token ids (newest first) and the optional wrapped summary."""

    user_id: str
    sessions: Tuple[Tuple[int, ...], ...]
    summary: Optional[Tuple[int, ...]] = None

    @property
    def sequence(self) -> Tuple[int, ...]:
        ids = list(self.summary or ())
        for session in self.sessions:
            ids.extend(session)
        return tuple(ids)


@dataclass
class Featurizer:
    vocab: Vocabulary
    catalog: Mapping[str, ContentItem]
    text: TextConfig
    ablation: AblationFlags = field(default_factory=AblationFlags)
    summaries: Mapping[str, str] = field(default_factory=dict)
    _item_cache: Dict[str, Tuple[int, ...]] = field(default_factory=dict, repr=False)

    @classmethod
    def fit(
        cls,
        catalog: Mapping[str, ContentItem],
        text: TextConfig,
        *,
        ablation: AblationFlags = AblationFlags(),
        summaries: Optional[Mapping[str, str]] = None,
    ) -> "Featurizer":
        """Build the vocabulary from rendered catalog texts and summaries."""

        summaries = dict(summaries or {})
        texts = [render_template(item, text.schema) for item in catalog.values()]
        texts.extend(summaries.values())
        vocab = build_vocabulary(texts, text.vocab_size)
        logger.debug("vocabulary of %d tokens from %d texts", vocab.size, len(texts))
        return cls(vocab=vocab, catalog=catalog, text=text, ablation=ablation, summaries=summaries)

    def item_ids(self, content_id: str) -> Tuple[int, ...]:
        cached = self._item_cache.get(content_id)
        if cached is None:
            item = self.catalog.get(content_id)
            if item is None:
                raise UnknownIdError("content", content_id)
            cached = tuple(
                item_token_ids(
                    item,
                    self.vocab,
                    schema=self.text.schema,
                    title_max_tokens=self.text.title_max_tokens,
                    abstract_max_tokens=self.text.abstract_max_tokens,
                )
            )
            self._item_cache[content_id] = cached
        return cached

    def candidate_sequence(self, content_id: str) -> List[int]:
        return wrap(self.item_ids(content_id))

    def candidate_batch(self, content_ids: Sequence[str]) -> SessionBatch:
        return SessionBatch.from_sequences([self.candidate_sequence(cid) for cid in content_ids])

    def summary_ids(self, user_id: str) -> Optional[Tuple[int, ...]]:
        if self.ablation.no_summary:
            return None
        text = self.summaries.get(user_id)
        if not text:
            return None
        return tuple(wrap(tokenize(text, self.vocab, self.text.summary_max_tokens)))

    def user_input(self, user_id: str, chronological: Sequence[str]) -> UserInput:
        summary = self.summary_ids(user_id)
        if self.ablation.summary_only:
            if summary is None:
                raise EmptyHistoryError(f"user {user_id} has no summary for a summary-only model")
            return UserInput(user_id=user_id, sessions=(), summary=summary)

        known = [cid for cid in chronological if cid in self.catalog]
        history = build_user_history(
            user_id,
            known,
            history_cap=self.text.history_cap,
            session_size=self.text.session_size,
            sessions_enabled=not self.ablation.no_sessions,
        )
        sessions = tuple(
            build_history_sequence([self.item_ids(cid) for cid in session]).ids
            for session in history.sessions
        )
        if not sessions and summary is None:
            raise EmptyHistoryError(f"user {user_id} has neither history nor summary")
        return UserInput(user_id=user_id, sessions=sessions, summary=summary)


@dataclass(frozen=True)
class DataBundle:
    catalog: Dict[str, ContentItem]
    records: List[BehaviorRecord]


def load_data_dir(data_dir: str | Path, behaviors: Optional[str | Path] = None) -> DataBundle:
    """Read ``catalog.tsv`` and ``behaviors.tsv`` (or an explicit behaviors file)."""

    root = Path(data_dir)
    catalog = parse_catalog(root / CATALOG_FILE)
    records = parse_behaviors(Path(behaviors) if behaviors else root / BEHAVIORS_FILE)
    logger.info("loaded %d items and %d impressions from %s", len(catalog), len(records), root)
    return DataBundle(catalog=catalog, records=records)


__all__ = ["DataBundle", "Featurizer", "UserInput", "load_data_dir"]
