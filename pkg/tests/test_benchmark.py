import pytest

from polyrec.benchmark import compare_sparsity, entropy_probe, scaling_table
from polyrec.config import EncoderConfig
from polyrec.exceptions import UsageError
from polyrec.recommender import build_model

from conftest import tiny_config

SMALL_ENCODER = EncoderConfig(layers=1, heads=2, model_dim=16, ffn_dim=32, max_session_tokens=32, vocab_size=64)


def test_scaling_table_rows():
    rows = scaling_table(SMALL_ENCODER, session_tokens=16, counts=(1, 2, 4), repetitions=2)
    assert [row.sessions for row in rows] == [1, 2, 4]
    assert [row.total_tokens for row in rows] == [16, 32, 64]
    assert all(row.seconds > 0 for row in rows)


def test_compare_sparsity_uses_the_same_token_budget():
    comparison = compare_sparsity(SMALL_ENCODER, sessions=4, session_tokens=16, repetitions=2)
    assert comparison.sessioned.total_tokens == comparison.single.total_tokens == 64
    assert comparison.single.sessions == 1
    assert comparison.ratio > 0


def test_sparse_mask_lowers_uhs_entropy(synthetic_bundle, featurizer):
    model = build_model(tiny_config(), 1)
    report = entropy_probe(model, featurizer, synthetic_bundle.records, limit=10)
    assert report.users == 10
    assert len(report.sparse) == len(report.full) == 8
    assert report.sparse_mean < report.full_mean
    assert report.sparse_lower_fraction >= 0.95


def test_entropy_probe_needs_a_uhs_layer(synthetic_bundle, featurizer):
    with pytest.raises(UsageError):
        entropy_probe(build_model(tiny_config(no_uhs=True), 1), featurizer, synthetic_bundle.records)


@pytest.mark.slow
def test_sessions_cost_well_under_one_long_sequence():
    comparison = compare_sparsity(EncoderConfig(), repetitions=10)
    assert comparison.sessioned.total_tokens == comparison.single.total_tokens == 4096
    assert comparison.ratio < 0.5
