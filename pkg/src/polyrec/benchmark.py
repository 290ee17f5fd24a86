"""Measurements: encoder cost under session sparsity and the UHS entropy probe."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import torch

from .config import EncoderConfig
from .encoder import SessionEncoder
from .exceptions import EmptyHistoryError, UsageError
from .featurize import Featurizer
from .models import BehaviorRecord
from .polyattn import attention_entropy, code_entropies
from .recommender import PolyRecommender
from .textprep import SOS_ID

logger = logging.getLogger(__name__)

SESSION_COUNTS = (1, 2, 4, 8)


@dataclass(frozen=True)
class TimingRow:
    label: str
    sessions: int
    tokens_per_session: int
    seconds: float
    repetitions: int

    @property
    def total_tokens(self) -> int:
        return self.sessions * self.tokens_per_session


@dataclass(frozen=True)
class SparsityComparison:
    sessioned: TimingRow
    single: TimingRow

    @property
    def ratio(self) -> float:
        return self.sessioned.seconds / self.single.seconds


def _random_sessions(config: EncoderConfig, sessions: int, length: int, seed: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    ids = rng.integers(SOS_ID + 2, config.vocab_size, size=(sessions, length))
    ids[:, 0] = SOS_ID
    return torch.from_numpy(ids).long()


def time_encoder(
    encoder: SessionEncoder,
    sessions: int,
    length: int,
    *,
    repetitions: int = 10,
    seed: int = 0,
    label: Optional[str] = None,
) -> TimingRow:
    """Median wall-clock of encoding ``sessions`` independent sessions of ``length`` tokens."""

    ids = _random_sessions(encoder.config, sessions, length, seed)
    encoder.eval()
    timings = []
    with torch.no_grad():
        encoder(ids)
        for _ in range(repetitions):
            started = time.perf_counter()
            encoder(ids)
            timings.append(time.perf_counter() - started)
    return TimingRow(
        label=label or f"{sessions}x{length}",
        sessions=sessions,
        tokens_per_session=length,
        seconds=float(np.median(timings)),
        repetitions=repetitions,
    )


def scaling_table(
    config: EncoderConfig,
    *,
    session_tokens: int = 512,
    counts: Sequence[int] = SESSION_COUNTS,
    repetitions: int = 10,
    seed: int = 0,
) -> List[TimingRow]:
    """Encoder time as the number of fixed-length sessions grows; cost is linear in the count."""

    torch.manual_seed(seed)
    encoder = SessionEncoder(replace(config, max_session_tokens=max(config.max_session_tokens, session_tokens)))
    return [time_encoder(encoder, count, session_tokens, repetitions=repetitions, seed=seed) for count in counts]


def compare_sparsity(
    config: EncoderConfig,
    *,
    sessions: int = 8,
    session_tokens: int = 512,
    repetitions: int = 10,
    seed: int = 0,
) -> SparsityComparison:
    """The same token budget encoded as ``sessions`` sessions versus one long sequence."""

    total = sessions * session_tokens
    torch.manual_seed(seed)
    encoder = SessionEncoder(replace(config, max_session_tokens=max(config.max_session_tokens, total)))
    sessioned = time_encoder(
        encoder, sessions, session_tokens, repetitions=repetitions, seed=seed, label="sessions"
    )
    single = time_encoder(encoder, 1, total, repetitions=repetitions, seed=seed, label="full")
    comparison = SparsityComparison(sessioned=sessioned, single=single)
    logger.info(
        "%dx%d: %.4fs, 1x%d: %.4fs, ratio %.3f",
        sessions, session_tokens, sessioned.seconds, total, single.seconds, comparison.ratio,
    )
    return comparison


@dataclass(frozen=True)
class EntropyReport:
    """Per-code mean UHS entropy (nats) with the sparse mask and with full attention."""

    sparse: List[float]
    full: List[float]
    users: int
    sparse_lower: int

    @property
    def sparse_mean(self) -> float:
        return math.fsum(self.sparse) / len(self.sparse)

    @property
    def full_mean(self) -> float:
        return math.fsum(self.full) / len(self.full)

    @property
    def sparse_lower_fraction(self) -> float:
        return self.sparse_lower / self.users if self.users else float("nan")


def entropy_probe(
    model: PolyRecommender,
    featurizer: Featurizer,
    records: Sequence[BehaviorRecord],
    *,
    limit: int = 100,
) -> EntropyReport:
    """Compare UHS attention entropy under the sparse mask and under full attention, same weights."""

    if model.uhs_codebook is None:
        raise UsageError("the entropy probe needs a model with a UHS layer")
    model.eval()
    codes = model.config.uhs_codes
    sparse_sums: List[List[float]] = [[] for _ in range(codes)]
    full_sums: List[List[float]] = [[] for _ in range(codes)]
    users = 0
    sparse_lower = 0
    with torch.no_grad():
        for record in records:
            if users >= limit:
                break
            try:
                user = featurizer.user_input(record.user_id, record.history)
            except EmptyHistoryError:
                continue
            sparse_weights = model.uhs_weights(user, sparse=True)
            full_weights = model.uhs_weights(user, sparse=False)
            for code, value in enumerate(code_entropies(sparse_weights)):
                sparse_sums[code].append(value)
            for code, value in enumerate(code_entropies(full_weights)):
                full_sums[code].append(value)
            if attention_entropy(sparse_weights) < attention_entropy(full_weights):
                sparse_lower += 1
            users += 1
    if not users:
        raise EmptyHistoryError("no record has a usable history for the entropy probe")
    return EntropyReport(
        sparse=[math.fsum(values) / len(values) for values in sparse_sums],
        full=[math.fsum(values) / len(values) for values in full_sums],
        users=users,
        sparse_lower=sparse_lower,
    )


__all__ = [
    "EntropyReport",
    "SESSION_COUNTS",
    "SparsityComparison",
    "TimingRow",
    "compare_sparsity",
    "entropy_probe",
    "scaling_table",
    "time_encoder",
]
