"""Render content into text, tokenize it and assemble boundary-marked sequences."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .exceptions import DataFormatError, EmptyHistoryError
from .models import ContentItem

PAD_ID, UNK_ID, SOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("[PAD]", "[UNK]", "[SOS]", "[EOS]")

_WORD = re.compile(r"\w+", re.UNICODE)

TEMPLATES: Dict[str, Tuple[str, str, str]] = {
    "news": ("News Title", "News Abstract", "News Category"),
    "book": ("Book Name", "Book Description", "Book Category"),
}


@dataclass(frozen=True)
class Vocabulary:
    """Token strings indexed by id; ids 0-3 are reserved."""

    tokens: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        index = {token: position for position, token in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "index", index)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        return cls(tokens=RESERVED_TOKENS + tuple(tokens))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path: str | Path) -> Path:
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")
        return file_path

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        file_path = Path(path)
        if not file_path.exists():
            raise DataFormatError(file_path, None, "vocabulary file not found")
        tokens = file_path.read_text(encoding="utf-8").splitlines()
        try:
            return cls(tokens=tuple(tokens))
        except ValueError as exc:
            raise DataFormatError(file_path, None, str(exc)) from exc


@dataclass(frozen=True)
class TokenSequence:
    ids: Tuple[int, ...]
    item_boundaries: Tuple[Tuple[int, int], ...]

    @property
    def sos_positions(self) -> List[int]:
        return [start for start, _ in self.item_boundaries]

    def __len__(self) -> int:
        return len(self.ids)


def render_template(item: ContentItem, schema: str = "news") -> str:
    title, abstract, category = TEMPLATES[schema]
    return f"{title}: {item.title}; {abstract}: {item.abstract}; {category}: {item.category}"


def split_words(text: str) -> List[str]:
    """Lowercase and split on whitespace and punctuation."""

    return _WORD.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> List[int]:
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    return [vocab.lookup(word) for word in split_words(text)[:max_len]]


def build_vocabulary(texts: Iterable[str], size: int = 8192) -> Vocabulary:
    """Keep the ``size - 4`` most frequent words; ties resolve alphabetically."""

    counts: Counter = Counter()
    for text in texts:
        counts.update(split_words(text))
    budget = max(0, size - len(RESERVED_TOKENS))
    ranked = sorted(counts.items(), key=lambda pair: (-pair[1], pair[0]))[:budget]
    return Vocabulary.from_tokens(token for token, _ in ranked)


def truncate_words(text: str, limit: int) -> str:
    return " ".join(split_words(text)[:limit])


def item_token_ids(
    item: ContentItem,
    vocab: Vocabulary,
    *,
    schema: str = "news",
    title_max_tokens: int = 32,
    abstract_max_tokens: int = 72,
) -> List[int]:
    """Tokens of the rendered template with title and abstract capped separately."""

    capped = ContentItem(
        id=item.id,
        title=truncate_words(item.title, title_max_tokens) or item.title,
        abstract=truncate_words(item.abstract, abstract_max_tokens),
        category=item.category,
    )
    text = render_template(capped, schema)
    return tokenize(text, vocab, max_len=len(split_words(text)) or 1)


def wrap(ids: Sequence[int]) -> List[int]:
    return [SOS_ID, *ids, EOS_ID]


def build_history_sequence(
    items: Sequence[Sequence[int]], summary: Optional[Sequence[int]] = None
) -> TokenSequence:
    """
    Wrap each tokenized item in SOS/EOS and concatenate them in the given
    (most-recent-first) order, with the summary, when present, first.
    """

    if not items:
        raise EmptyHistoryError("cannot build a history sequence from zero items")
    pieces = ([summary] if summary is not None else []) + list(items)
    ids: List[int] = []
    boundaries: List[Tuple[int, int]] = []
    for piece in pieces:
        start = len(ids)
        ids.extend(wrap(piece))
        boundaries.append((start, len(ids) - 1))
    return TokenSequence(ids=tuple(ids), item_boundaries=tuple(boundaries))


__all__ = [
    "EOS_ID",
    "PAD_ID",
    "RESERVED_TOKENS",
    "SOS_ID",
    "TEMPLATES",
    "TokenSequence",
    "UNK_ID",
    "Vocabulary",
    "build_history_sequence",
    "build_vocabulary",
    "item_token_ids",
    "render_template",
    "split_words",
    "tokenize",
    "truncate_words",
    "wrap",
]
