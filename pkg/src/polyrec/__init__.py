
from .config import (
    PROFILER_TOKEN_ENV_VAR,
    PROFILER_URL_ENV_VAR,
    AblationFlags,
    EncoderConfig,
    ModelConfig,
    Settings,
    TrainConfig,
    load_settings,
)
from .exceptions import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DataFormatError,
    DimensionError,
    EmptyHistoryError,
    InvalidMaskError,
    NumericalError,
    PolyrecError,
    SummaryApiError,
    SummaryAuthorizationError,
    SummaryRequestError,
    UndefinedMetricError,
    UnknownIdError,
)
from .featurize import Featurizer, UserInput, load_data_dir
from .metrics import auc, mrr, ndcg_at_k
from .models import BehaviorRecord, ContentItem, EvalReport, Impression
from .polyattn import build_sparse_mask, poly_attend
from .predictor import nce_loss, relevance_score
from .profiler import HttpSummaryBackend, StubSummaryBackend, build_prompt, summarize
from .recommender import PolyRecommender, build_model
from .synthetic import generate_synthetic
from .trainer import EmbeddingStore, evaluate, precompute_embeddings, train

__all__ = [
    "PROFILER_TOKEN_ENV_VAR",
    "PROFILER_URL_ENV_VAR",
    "AblationFlags",
    "EncoderConfig",
    "ModelConfig",
    "Settings",
    "TrainConfig",
    "load_settings",
    "Featurizer",
    "UserInput",
    "load_data_dir",
    "auc",
    "mrr",
    "ndcg_at_k",
    "BehaviorRecord",
    "ContentItem",
    "EvalReport",
    "Impression",
    "build_sparse_mask",
    "poly_attend",
    "nce_loss",
    "relevance_score",
    "HttpSummaryBackend",
    "StubSummaryBackend",
    "build_prompt",
    "summarize",
    "PolyRecommender",
    "build_model",
    "generate_synthetic",
    "EmbeddingStore",
    "evaluate",
    "precompute_embeddings",
    "train",
    "PolyrecError",
    "CheckpointError",
    "ConfigError",
    "ConfigMismatchError",
    "DataFormatError",
    "DimensionError",
    "EmptyHistoryError",
    "InvalidMaskError",
    "NumericalError",
    "SummaryApiError",
    "SummaryAuthorizationError",
    "SummaryRequestError",
    "UndefinedMetricError",
    "UnknownIdError",
]
