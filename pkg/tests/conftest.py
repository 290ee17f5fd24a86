import sys
from pathlib import Path


PROJECT_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

import pytest

from polyrec.config import AblationFlags, EncoderConfig, ModelConfig, SynthConfig, TextConfig
from polyrec.featurize import Featurizer, load_data_dir
from polyrec.synthetic import generate_synthetic

# Small enough that a full train/eval cycle takes seconds on one core.
TINY_VALUES = {
    "layers": 1,
    "heads": 2,
    "model_dim": 16,
    "ffn_dim": 32,
    "vocab_size": 256,
    "title_max_tokens": 6,
    "abstract_max_tokens": 6,
    "summary_max_tokens": 12,
    "history_cap": 8,
    "session_size": 4,
    "user_codes": 4,
    "candidate_codes": 2,
    "window": 8,
    "epochs": 1,
    "batch_size": 8,
    "negatives": 2,
    "dev_fraction": 0.3,
    "threads": 1,
    "synth_users": 12,
    "synth_items": 60,
    "synth_categories": 4,
    "synth_history": 8,
    "synth_candidates": 5,
    "synth_impressions": 2,
}


def tiny_config(**ablation: bool) -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(layers=1, heads=2, model_dim=16, ffn_dim=32, vocab_size=256, dropout=0.0),
        code_dim=8,
        uhs_codes=8,
        user_codes=4,
        candidate_codes=2,
        rep_dim=16,
        window=8,
        random_ratio=0.1,
        ablation=AblationFlags(**ablation),
    )


def tiny_text() -> TextConfig:
    return TextConfig(
        vocab_size=256,
        title_max_tokens=6,
        abstract_max_tokens=6,
        summary_max_tokens=12,
        history_cap=8,
        session_size=4,
    )


@pytest.fixture
def synthetic_dir(tmp_path):
    config = SynthConfig(
        n_users=12,
        n_items=60,
        n_categories=4,
        history_len=8,
        candidates_per_impression=5,
        impressions_per_user=2,
        seed=3,
    )
    generate_synthetic(config, tmp_path / "data")
    return tmp_path / "data"


@pytest.fixture
def synthetic_bundle(synthetic_dir):
    return load_data_dir(synthetic_dir)


@pytest.fixture
def featurizer(synthetic_bundle):
    return Featurizer.fit(synthetic_bundle.catalog, tiny_text())
