"""The assembled recommender: shared encoder, three codebook layers and the score head."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import torch
from torch import nn

from .config import ModelConfig
from .encoder import SessionBatch, SessionEncoder, encode_histories
from .featurize import UserInput
from .numerics import seed_everything
from .polyattn import Codebook, SparseMask, build_sparse_mask, ccs, uhs, uie
from .predictor import ScoreHead, relevance_score

logger = logging.getLogger(__name__)


class PolyRecommender(nn.Module):
    """
    User side: sessions -> encoder -> UHS (sparse) -> UIE -> Gamma ``[m, r]``.
    Candidate side: item -> the same encoder -> CCS -> Lambda ``[n, r]``.
    The two sides share weights but never activations, so both embeddings
    can be computed and stored independently.
    """

    def __init__(self, config: ModelConfig, *, mask_seed: int = 0) -> None:
        super().__init__()
        self.config = config
        self.mask_seed = mask_seed
        d, p, std = config.encoder.model_dim, config.code_dim, config.init_std
        self.encoder = SessionEncoder(config.encoder)
        self.uhs_codebook = None if config.ablation.no_uhs else Codebook(config.uhs_codes, d, p, std)
        self.uie_codebook = Codebook(config.user_codes, d, p, std)
        self.ccs_codebook = Codebook(config.candidate_codes, d, p, std)
        self.projection = nn.Linear(d, config.rep_dim, bias=False) if config.projects_output else None
        self.head = ScoreHead(config.rep_dim, std)
        self._init_weights(std)
        if config.ablation.freeze_encoder:
            for param in self.encoder.parameters():
                param.requires_grad_(False)

    def _init_weights(self, std: float) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.normal_(module.weight, std=std)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    nn.init.zeros_(module.bias)
        with torch.no_grad():
            self.encoder.token_embedding.weight[self.encoder.token_embedding.padding_idx].zero_()

    def uhs_mask(self, length: int, sos_positions: Sequence[int], seed: int) -> Optional[SparseMask]:
        if self.config.ablation.full_attention:
            return None
        flags = self.config.ablation
        return build_sparse_mask(
            length,
            sos_positions,
            self.config.uhs_codes,
            self.config.window,
            self.config.random_ratio,
            seed,
            local_window=not flags.no_local_window,
            global_tokens=not flags.no_global_tokens,
            random_tokens=not flags.no_random_tokens,
        )

    def _project(self, rows: torch.Tensor) -> torch.Tensor:
        return rows if self.projection is None else self.projection(rows)

    def _history_summaries(
        self, hidden: torch.Tensor, sos_positions: List[int], mask_seed: int, sparse: bool = True
    ) -> torch.Tensor:
        if self.uhs_codebook is None:
            # Each content is represented by its SOS state.
            return hidden[sos_positions]
        mask = self.uhs_mask(hidden.shape[0], sos_positions, mask_seed) if sparse else None
        return uhs(hidden, self.uhs_codebook, mask)

    def user_embeddings(
        self, inputs: Sequence[UserInput], mask_seed: Optional[int] = None
    ) -> torch.Tensor:
        """Gamma for each user, ``[B, m, r]``."""

        seed = self.mask_seed if mask_seed is None else mask_seed
        encoded = encode_histories(self.encoder, [(u.sessions, u.summary) for u in inputs])
        gammas = []
        for hidden, sos_positions in encoded:
            summaries = self._history_summaries(hidden, sos_positions, seed)
            gammas.append(uie(summaries, self.uie_codebook))
        return self._project(torch.stack(gammas))

    def user_embedding(self, user: UserInput, mask_seed: Optional[int] = None) -> torch.Tensor:
        return self.user_embeddings([user], mask_seed)[0]

    def uhs_weights(self, user: UserInput, *, sparse: bool = True, mask_seed: Optional[int] = None) -> torch.Tensor:
        """UHS attention weights ``[k, L+]`` for one user, under the sparse mask or full attention."""

        if self.uhs_codebook is None:
            raise ValueError("model has no UHS layer")
        seed = self.mask_seed if mask_seed is None else mask_seed
        (hidden, sos_positions), = encode_histories(self.encoder, [(user.sessions, user.summary)])
        mask = self.uhs_mask(hidden.shape[0], sos_positions, seed) if sparse else None
        _, weights = uhs(hidden, self.uhs_codebook, mask, return_weights=True)
        return weights

    def candidate_embeddings(self, batch: SessionBatch) -> torch.Tensor:
        """Lambda for each candidate, ``[C, n, r]``."""

        hidden = self.encoder(batch.ids, batch.pad_mask)
        return self._project(ccs(hidden, self.ccs_codebook, batch.pad_mask))

    def score(self, users: torch.Tensor, candidates: torch.Tensor) -> torch.Tensor:
        """Scores ``[B, C]`` from Gamma ``[B, m, r]`` and Lambda ``[B, C, n, r]``."""

        return relevance_score(users.unsqueeze(1), candidates, self.head)


def build_model(config: ModelConfig, seed: int) -> PolyRecommender:
    """Seeded construction so the same (config, seed) gives identical weights."""

    seed_everything(seed)
    model = PolyRecommender(config, mask_seed=seed)
    total = sum(param.numel() for param in model.parameters())
    logger.debug("built model with %d parameters", total)
    return model


__all__ = ["PolyRecommender", "build_model"]
