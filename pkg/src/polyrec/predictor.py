"""Engagement predictor: fuse user and candidate code embeddings into one score."""

from __future__ import annotations

import torch
from torch import nn

from .exceptions import DimensionError
from .numerics import gelu_map, matmul, softmax_rows


class ScoreHead(nn.Module):
    """Holds ``W^s``, the ``r x r`` matrix that weights the code pairs."""

    def __init__(self, rep_dim: int, init_std: float = 0.02) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.randn(rep_dim, rep_dim) * init_std)

    def forward(self, user: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        return relevance_score(user, candidate, self)


def match_scores(user: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
    """Row-major flatten of ``user @ candidate^T``: entry ``a*n + b`` is ``user_a . candidate_b``."""

    if user.shape[-1] != candidate.shape[-1]:
        raise DimensionError("match_scores", user.shape, candidate.shape)
    return matmul(user, candidate.transpose(-1, -2)).flatten(-2)


def relevance_score(user: torch.Tensor, candidate: torch.Tensor, head: ScoreHead) -> torch.Tensor:
    """
    Attention-weighted sum of the matching scores. Leading axes broadcast, so
    ``user [B, 1, m, r]`` against ``candidate [B, C, n, r]`` scores ``C``
    candidates per user at once.
    """

    matches = match_scores(user, candidate)
    gate = gelu_map(matmul(candidate, head.weight))
    pair_weights = softmax_rows(matmul(user, gate.transpose(-1, -2)).flatten(-2))
    return (pair_weights * matches).sum(dim=-1)


def nce_loss(positive: torch.Tensor, negatives: torch.Tensor) -> torch.Tensor:
    """
    ``-log(exp(s+) / (exp(s+) + sum exp(s-)))`` averaged over the batch.
    ``positive`` is ``[]`` or ``[B]``; ``negatives`` is ``[R]`` or ``[B, R]``.
    """

    positive = torch.as_tensor(positive)
    negatives = torch.as_tensor(negatives)
    if negatives.shape[-1] < 1:
        raise ValueError("nce_loss needs at least one negative")
    logits = torch.cat([positive.unsqueeze(-1), negatives], dim=-1)
    losses = torch.logsumexp(logits, dim=-1) - positive
    return losses.mean()


__all__ = ["ScoreHead", "match_scores", "nce_loss", "relevance_score"]
