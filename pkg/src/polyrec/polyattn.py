"""Codebook (poly-) attention layers, the UHS sparse mask and the entropy probe."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from .exceptions import DimensionError, InvalidDistributionError
from .numerics import matmul, softmax_rows, tanh_map


class Codebook(nn.Module):
    """``q`` learned codes of width ``p`` and the ``d x p`` key projection."""

    def __init__(self, size: int, model_dim: int, code_dim: int, init_std: float = 0.02) -> None:
        super().__init__()
        if size < 1:
            raise ValueError("a codebook needs at least one code")
        if code_dim > model_dim:
            raise ValueError("code width must not exceed the model width")
        self.codes = nn.Parameter(torch.randn(size, code_dim) * init_std)
        self.projection = nn.Parameter(torch.randn(model_dim, code_dim) * init_std)

    @property
    def size(self) -> int:
        return self.codes.shape[0]


@dataclass(frozen=True)
class SparseMask:
    """Which of the ``L`` tokens each of the ``k`` codes may attend to."""

    allowed: torch.Tensor
    window: int
    random_ratio: float
    seed: int

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.allowed.shape)


def _code_rng(seed: int, code: int) -> np.random.Generator:
    key = np.array([seed % 2**63, code], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def window_span(center: int, window: int, length: int) -> range:
    """``window`` positions around ``center``, shifted to stay inside ``[0, length)``."""

    width = min(window, length)
    start = center - (width - 1) // 2
    start = max(0, min(start, length - width))
    return range(start, start + width)


def build_sparse_mask(
    length: int,
    sos_positions: Sequence[int],
    k: int,
    window: int,
    random_ratio: float,
    seed: int,
    *,
    local_window: bool = True,
    global_tokens: bool = True,
    random_tokens: bool = True,
) -> SparseMask:
    """
    Combine a local window per code, globally visible SOS positions and a
    random share of the remaining tokens.

    Code ``a`` centers its window at ``floor((a + 0.5) * length / k)``. The
    random share is drawn per code from a Philox stream keyed by
    ``(seed, a)``, so masks are reproducible independent of call order.
    """

    if window < 1 or k < 1 or not 0.0 <= random_ratio <= 1.0:
        raise ValueError("window and k must be positive, random_ratio in [0, 1]")
    allowed = np.zeros((k, length), dtype=bool)
    for code in range(k):
        center = min(length - 1, int(math.floor((code + 0.5) * length / k)))
        row = allowed[code]
        if local_window:
            span = window_span(center, window, length)
            row[span.start : span.stop] = True
        if global_tokens and sos_positions:
            row[list(sos_positions)] = True
        if random_tokens and random_ratio > 0:
            remaining = np.flatnonzero(~row)
            count = int(math.floor(random_ratio * len(remaining)))
            if count:
                chosen = _code_rng(seed, code).choice(remaining, size=count, replace=False)
                row[chosen] = True
        if not row.any():
            row[center] = True
    return SparseMask(
        allowed=torch.from_numpy(allowed), window=window, random_ratio=random_ratio, seed=seed
    )


MaskLike = Union[SparseMask, torch.Tensor, None]


def poly_attend(
    hidden: torch.Tensor,
    book: Codebook,
    mask: MaskLike = None,
    *,
    return_weights: bool = False,
):
    """
    For each code ``a``: ``w = softmax(code_a . tanh(H W)^T)`` over visible
    tokens and output row ``a = w H``. ``hidden`` may carry leading batch axes.
    """

    if hidden.shape[-1] != book.projection.shape[0]:
        raise DimensionError("poly_attend", hidden.shape, book.projection.shape)
    keys = tanh_map(matmul(hidden, book.projection))
    scores = matmul(book.codes, keys.transpose(-1, -2))
    allowed = mask.allowed if isinstance(mask, SparseMask) else mask
    if allowed is not None and allowed.shape[-2:] != scores.shape[-2:]:
        raise DimensionError("poly_attend mask", allowed.shape, scores.shape)
    weights = softmax_rows(scores, allowed)
    output = matmul(weights, hidden)
    if return_weights:
        return output, weights
    return output


def uhs(hidden: torch.Tensor, book: Codebook, mask: MaskLike = None, *, return_weights: bool = False):
    """User history summarizing: all history tokens into ``k`` content embeddings."""

    return poly_attend(hidden, book, mask, return_weights=return_weights)


def uie(summaries: torch.Tensor, book: Codebook) -> torch.Tensor:
    """User interest extracting: ``k`` content embeddings into ``m`` interest vectors."""

    return poly_attend(summaries, book)


def ccs(hidden: torch.Tensor, book: Codebook, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Candidate content summarizing, over real tokens only when ``pad_mask`` is given."""

    mask = None
    if pad_mask is not None:
        mask = pad_mask.unsqueeze(-2).expand(*pad_mask.shape[:-1], book.size, pad_mask.shape[-1])
    return poly_attend(hidden, book, mask)


def code_entropies(weights: torch.Tensor, tolerance: float = 1e-4) -> List[float]:
    """Entropy in nats of each row; ``0 ln 0`` counts as zero."""

    rows = weights.detach().to(torch.float64).reshape(-1, weights.shape[-1])
    totals = rows.sum(dim=-1)
    for row, total in enumerate(totals.tolist()):
        if abs(total - 1.0) > tolerance or bool((rows[row] < 0).any()):
            raise InvalidDistributionError(row, total)
    logs = torch.where(rows > 0, torch.log(rows.clamp_min(1e-300)), torch.zeros_like(rows))
    return (-(rows * logs).sum(dim=-1)).tolist()


def attention_entropy(weights: torch.Tensor) -> float:
    """Mean over rows of the attention entropy."""

    entropies = code_entropies(weights)
    return math.fsum(entropies) / len(entropies)


__all__ = [
    "Codebook",
    "SparseMask",
    "attention_entropy",
    "build_sparse_mask",
    "ccs",
    "code_entropies",
    "poly_attend",
    "uhs",
    "uie",
    "window_span",
]
