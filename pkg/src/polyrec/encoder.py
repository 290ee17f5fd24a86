"""Session encoder: a small pre-norm transformer shared by history and candidates.

Each session is encoded on its own with session-local positions, so tokens
never attend across sessions. A user history of ``g`` sessions therefore
costs ``g`` times one session instead of growing quadratically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from .config import EncoderConfig
from .exceptions import EmptyHistoryError, SessionLengthError
from .numerics import gelu_map, matmul, softmax_rows
from .textprep import PAD_ID, SOS_ID


@dataclass(frozen=True)
class SessionBatch:
    """Padded token ids of ``g`` sessions, ``True`` in ``pad_mask`` at real tokens."""

    ids: torch.Tensor
    pad_mask: torch.Tensor
    lengths: Tuple[int, ...]

    @classmethod
    def from_sequences(cls, sequences: Sequence[Sequence[int]]) -> "SessionBatch":
        if not sequences:
            raise EmptyHistoryError("no sessions to batch")
        width = max(len(sequence) for sequence in sequences)
        ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
        for row, sequence in enumerate(sequences):
            ids[row, : len(sequence)] = torch.as_tensor(list(sequence), dtype=torch.long)
        return cls(ids=ids, pad_mask=ids != PAD_ID, lengths=tuple(len(s) for s in sequences))

    def __len__(self) -> int:
        return len(self.lengths)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, model_dim: int, heads: int, dropout: float) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = model_dim // heads
        self.query = nn.Linear(model_dim, model_dim)
        # A key bias only adds a per-row constant to the scores.
        self.key = nn.Linear(model_dim, model_dim, bias=False)
        self.value = nn.Linear(model_dim, model_dim)
        self.out = nn.Linear(model_dim, model_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        batch, length, width = x.shape

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        mask = None if key_mask is None else key_mask[:, None, None, :].expand_as(scores)
        weights = self.dropout(softmax_rows(scores, mask))
        mixed = matmul(weights, v).transpose(1, 2).reshape(batch, length, width)
        return self.out(mixed)


class EncoderBlock(nn.Module):
    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.attn_norm = nn.LayerNorm(config.model_dim)
        self.attention = MultiHeadSelfAttention(config.model_dim, config.heads, config.dropout)
        self.ffn_norm = nn.LayerNorm(config.model_dim)
        self.ffn_in = nn.Linear(config.model_dim, config.ffn_dim)
        self.ffn_out = nn.Linear(config.ffn_dim, config.model_dim)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor]) -> torch.Tensor:
        x = x + self.dropout(self.attention(self.attn_norm(x), key_mask))
        hidden = gelu_map(self.ffn_in(self.ffn_norm(x)))
        return x + self.dropout(self.ffn_out(hidden))


class SessionEncoder(nn.Module):
    """Token + learned positional embeddings followed by pre-norm blocks."""

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.model_dim, padding_idx=PAD_ID)
        self.position_embedding = nn.Embedding(config.max_session_tokens, config.model_dim)
        self.dropout = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(EncoderBlock(config) for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(config.model_dim)

    def forward(self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Encode ``[g, l]`` padded sessions into ``[g, l, d]`` hidden states."""

        length = ids.shape[-1]
        if length > self.config.max_session_tokens:
            raise SessionLengthError(length, self.config.max_session_tokens)
        if pad_mask is None:
            pad_mask = ids != PAD_ID
        key_mask = None if bool(pad_mask.all()) else pad_mask
        positions = torch.arange(length, device=ids.device)
        x = self.dropout(self.token_embedding(ids) + self.position_embedding(positions))
        for block in self.blocks:
            x = block(x, key_mask)
        return self.final_norm(x)

    def encode_session(self, ids: Sequence[int] | torch.Tensor) -> torch.Tensor:
        """Encode one unpadded session into ``[l, d]``."""

        tokens = torch.as_tensor(ids, dtype=torch.long).reshape(1, -1)
        return self(tokens)[0]

    # Candidates go through the very same weights as history sessions.
    encode_candidate = encode_session

    def encode_sequences(self, sequences: Sequence[Sequence[int]]) -> List[torch.Tensor]:
        """Encode many sessions in one padded batch; returns their real rows only."""

        batch = SessionBatch.from_sequences(sequences)
        hidden = self(batch.ids, batch.pad_mask)
        return [hidden[row, :length] for row, length in enumerate(batch.lengths)]


HistoryInput = Tuple[Sequence[Sequence[int]], Optional[Sequence[int]]]


def encode_histories(
    encoder: SessionEncoder, histories: Sequence[HistoryInput]
) -> List[Tuple[torch.Tensor, List[int]]]:
    """
    Encode the sessions (and optional summary session) of many users in one
    padded batch, then reassemble ``H+`` and its SOS positions per user.
    """

    sequences: List[Sequence[int]] = []
    layout: List[int] = []
    for sessions, summary in histories:
        pieces = ([summary] if summary is not None else []) + list(sessions)
        if not pieces:
            raise EmptyHistoryError("user history has no sessions")
        sequences.extend(pieces)
        layout.append(len(pieces))

    encoded = encoder.encode_sequences(sequences)
    results = []
    cursor = 0
    for count in layout:
        rows = torch.cat(encoded[cursor : cursor + count], dim=0)
        ids = [token for sequence in sequences[cursor : cursor + count] for token in sequence]
        sos_positions = [position for position, token in enumerate(ids) if token == SOS_ID]
        results.append((rows, sos_positions))
        cursor += count
    return results


def encode_user_history(
    encoder: SessionEncoder,
    sessions: SessionBatch,
    summary_session: Optional[Sequence[int]] = None,
) -> Tuple[torch.Tensor, List[int]]:
    """
    Concatenate per-session encodings (padding dropped), with the summary
    session's encoding first when given. Returns ``H+`` and the SOS positions.
    """

    if len(sessions) == 0:
        raise EmptyHistoryError("user history has no sessions")
    rows = [sessions.ids[row, :length].tolist() for row, length in enumerate(sessions.lengths)]
    return encode_histories(encoder, [(rows, summary_session)])[0]


__all__ = [
    "EncoderBlock",
    "MultiHeadSelfAttention",
    "SessionBatch",
    "HistoryInput",
    "SessionEncoder",
    "encode_histories",
    "encode_user_history",
]
