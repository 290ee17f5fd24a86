"""User-interest profiling: prompt construction and pluggable summary backends."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence

import requests
from requests import Response, Session
from requests.exceptions import RequestException

from .config import ProfilerSettings, PromptSpec
from .exceptions import (
    DataFormatError,
    EmptyHistoryError,
    PolyrecError,
    SummaryApiError,
    SummaryAuthorizationError,
    SummaryRequestError,
)
from .dataio import latest_histories
from .models import BehaviorRecord, ContentItem
from .textprep import TEMPLATES, split_words

logger = logging.getLogger(__name__)

SUMMARIES_FILE = "summaries.tsv"
BACKOFF_SECONDS = 0.5
RETRIABLE_STATUS = {429, 500, 502, 503, 504}

SYSTEM_INSTRUCTION = (
    "<s>[INST] <<SYS>>\n"
    "You are a recommendation assistant. You read the list of {kind} a user engaged with, "
    "ordered from the most recent to the oldest, and describe the user's interests.\n"
    "<</SYS>>\n\n"
)
KIND = {"news": "news articles", "book": "books"}


def build_prompt(history: Sequence[ContentItem], prompt_spec: PromptSpec) -> str:
    """
    System preamble, then the most recent ``max_items`` contents (abstracts
    cut to ``max_words_per_abstract`` words), then the closing request.
    """

    if not history:
        raise EmptyHistoryError("cannot build a prompt from an empty history")
    title_label, abstract_label, category_label = TEMPLATES[prompt_spec.schema]
    lines = [SYSTEM_INSTRUCTION.format(kind=KIND[prompt_spec.schema])]
    lines.append(f"User history ({min(len(history), prompt_spec.max_items)} items):\n")
    for position, item in enumerate(history[: prompt_spec.max_items], start=1):
        words = item.abstract.split()
        abstract = " ".join(words[: prompt_spec.max_words_per_abstract])
        lines.append(
            f"{position}. {title_label}: {item.title}; {abstract_label}: {abstract}; "
            f"{category_label}: {item.category}\n"
        )
    lines.append(
        f"\nSummarize the user's interests in {prompt_spec.sentence_budget} sentences. [/INST]"
    )
    return "".join(lines)


class SummaryBackend(Protocol):
    def summarize(self, history: Sequence[ContentItem], prompt_spec: PromptSpec) -> str:
        ...


def _top(counter: Counter, count: int) -> List[str]:
    return [key for key, _ in sorted(counter.items(), key=lambda pair: (-pair[1], pair[0]))[:count]]


class StubSummaryBackend:
    """Deterministic frequency profile; needs no network and no model."""

    def summarize(self, history: Sequence[ContentItem], prompt_spec: PromptSpec) -> str:
        if not history:
            raise EmptyHistoryError("cannot summarize an empty history")
        categories = Counter(item.category for item in history if item.category)
        title_words = Counter(word for item in history for word in split_words(item.title))
        recent = next((item.category for item in history if item.category), "general topics")
        return (
            f"This user is interested in {', '.join(_top(categories, 3)) or 'general topics'}. "
            f"They frequently read about {', '.join(_top(title_words, 3))}. "
            f"Recent activity emphasizes {recent}."
        )


class HttpSummaryBackend:
    """
    JSON-over-HTTP completion service: ``{prompt, max_tokens}`` in, ``{text}``
    out, bearer-token authenticated, retried with exponential backoff.
    """

    def __init__(
        self,
        settings: ProfilerSettings,
        *,
        session: Optional[Session] = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not settings.endpoint or not settings.token:
            raise SummaryAuthorizationError("http summary backend needs an endpoint and a token")
        self.settings = settings
        self.session = session or requests.Session()
        self.sleep = sleep

    def summarize(self, history: Sequence[ContentItem], prompt_spec: PromptSpec) -> str:
        return self.complete(build_prompt(history, prompt_spec))

    def complete(self, prompt: str) -> str:
        payload = {"prompt": prompt, "max_tokens": self.settings.max_tokens}
        attempts = self.settings.retries + 1
        last_error = "no attempt made"
        for attempt in range(1, attempts + 1):
            try:
                response = self._perform_request(payload)
            except _Retriable as exc:
                last_error = str(exc)
                if attempt < attempts:
                    delay = BACKOFF_SECONDS * 2 ** (attempt - 1)
                    logger.warning("summary request failed (%s); retrying in %.1fs", exc, delay)
                    self.sleep(delay)
                continue
            return self._parse_text(response)
        raise SummaryRequestError(last_error, attempts)

    def _perform_request(self, payload: Mapping[str, object]) -> Response:
        try:
            response = self.session.post(
                self.settings.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self.settings.token}"},
                timeout=self.settings.timeout,
            )
        except RequestException as exc:
            raise _Retriable(str(exc)) from exc

        if response.status_code == 401:
            raise SummaryAuthorizationError("bearer token rejected by the summary service")
        if response.status_code in RETRIABLE_STATUS:
            raise _Retriable(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise SummaryApiError(response.status_code, _extract_error_message(response))
        return response

    @staticmethod
    def _parse_text(response: Response) -> str:
        try:
            payload = response.json()
        except json.JSONDecodeError as exc:
            raise SummaryApiError(response.status_code, "summary service returned invalid JSON") from exc
        text = payload.get("text") if isinstance(payload, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise SummaryApiError(response.status_code, "summary service returned an empty completion")
        return text


class _Retriable(Exception):
    pass


def _extract_error_message(response: Response) -> str:
    try:
        payload = response.json()
        if isinstance(payload, dict):
            return payload.get("message") or payload.get("error") or str(payload)
    except json.JSONDecodeError:
        pass
    return response.text or f"HTTP {response.status_code}"


def make_backend(settings: ProfilerSettings) -> SummaryBackend:
    if settings.backend == "stub":
        return StubSummaryBackend()
    return HttpSummaryBackend(settings)


def summarize(history: Sequence[ContentItem], prompt_spec: PromptSpec, backend: SummaryBackend) -> str:
    text = backend.summarize(history, prompt_spec)
    if not text or not text.strip():
        raise SummaryApiError(200, "backend produced an empty summary")
    return " ".join(text.split())


def history_hash(content_ids: Sequence[str]) -> str:
    return hashlib.sha256(" ".join(content_ids).encode("utf-8")).hexdigest()[:16]


class SummaryCache:
    """``user_id, history_hash, summary`` rows; a changed history is a miss."""

    def __init__(self, entries: Optional[Dict[str, tuple]] = None) -> None:
        self.entries: Dict[str, tuple] = dict(entries or {})

    @classmethod
    def load(cls, path: str | Path) -> "SummaryCache":
        file_path = Path(path)
        entries: Dict[str, tuple] = {}
        if file_path.exists():
            for number, line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), start=1):
                if not line.strip():
                    continue
                columns = line.split("\t")
                if len(columns) != 3:
                    raise DataFormatError(file_path, number, f"expected 3 columns, got {len(columns)}")
                entries[columns[0]] = (columns[1], columns[2])
        return cls(entries)

    def get(self, user_id: str, content_ids: Sequence[str]) -> Optional[str]:
        entry = self.entries.get(user_id)
        if entry and entry[0] == history_hash(content_ids):
            return entry[1]
        return None

    def put(self, user_id: str, content_ids: Sequence[str], summary: str) -> None:
        self.entries[user_id] = (history_hash(content_ids), " ".join(summary.split()))

    def summaries(self) -> Dict[str, str]:
        return {user_id: entry[1] for user_id, entry in self.entries.items()}

    def save(self, path: str | Path) -> Path:
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with file_path.open("w", encoding="utf-8", newline="\n") as handle:
            for user_id in sorted(self.entries):
                digest, summary = self.entries[user_id]
                handle.write(f"{user_id}\t{digest}\t{summary}\n")
        return file_path


def summarize_users(
    histories: Mapping[str, Sequence[ContentItem]],
    prompt_spec: PromptSpec,
    backend: SummaryBackend,
    *,
    cache: Optional[SummaryCache] = None,
    max_in_flight: int = 4,
) -> Dict[str, str]:
    """
    Summaries for every user, reusing cached ones whose history is unchanged.

    Each summary goes into ``cache`` as soon as its request finishes. If any
    request fails the rest still run, and the first error is raised afterwards.
    """

    cache = cache if cache is not None else SummaryCache()
    pending = {}
    for user_id, history in histories.items():
        ids = [item.id for item in history]
        if cache.get(user_id, ids) is None and history:
            pending[user_id] = history
    if pending:
        logger.info("summarizing %d users (%d cached)", len(pending), len(histories) - len(pending))
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            futures = {
                pool.submit(summarize, history, prompt_spec, backend): user_id
                for user_id, history in pending.items()
            }
            failure: Optional[PolyrecError] = None
            for future in as_completed(futures):
                user_id = futures[future]
                try:
                    summary = future.result()
                except PolyrecError as exc:
                    logger.warning("summary for %s failed: %s", user_id, exc)
                    failure = failure or exc
                    continue
                cache.put(user_id, [item.id for item in pending[user_id]], summary)
        if failure is not None:
            raise failure
    summaries = cache.summaries()
    return {user_id: summaries[user_id] for user_id in histories if user_id in summaries}


def read_summaries(path: str | Path) -> Dict[str, str]:
    return SummaryCache.load(path).summaries()


def profile_histories(
    records: Iterable[BehaviorRecord], catalog: Mapping[str, ContentItem]
) -> Dict[str, List[ContentItem]]:
    """Each user's latest history as catalog items, most recent first; empty histories are left out."""

    histories = {}
    for user_id, chronological in latest_histories(records).items():
        items = [catalog[cid] for cid in reversed(chronological) if cid in catalog]
        if items:
            histories[user_id] = items
    return histories


__all__ = [
    "HttpSummaryBackend",
    "SUMMARIES_FILE",
    "StubSummaryBackend",
    "SummaryBackend",
    "SummaryCache",
    "build_prompt",
    "history_hash",
    "make_backend",
    "profile_histories",
    "read_summaries",
    "summarize",
    "summarize_users",
]
