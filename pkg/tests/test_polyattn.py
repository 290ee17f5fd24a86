import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from polyrec.exceptions import DimensionError, InvalidDistributionError
from polyrec.polyattn import (
    Codebook,
    attention_entropy,
    build_sparse_mask,
    ccs,
    code_entropies,
    poly_attend,
    uhs,
    uie,
    window_span,
)


def _visible(mask, code):
    return set(torch.nonzero(mask.allowed[code]).flatten().tolist())


def test_mask_hand_example():
    mask = build_sparse_mask(10, [0, 5], k=2, window=2, random_ratio=0.0, seed=0)
    assert mask.shape == (2, 10)
    assert _visible(mask, 0) == {0, 2, 3, 5}
    assert _visible(mask, 1) == {0, 5, 7, 8}


def test_window_span_stays_inside_the_sequence():
    assert list(window_span(0, 4, 10)) == [0, 1, 2, 3]
    assert list(window_span(9, 4, 10)) == [6, 7, 8, 9]
    assert list(window_span(2, 20, 5)) == [0, 1, 2, 3, 4]


def test_window_covering_everything_saturates_the_mask():
    mask = build_sparse_mask(12, [0], k=3, window=12, random_ratio=0.0, seed=0)
    assert bool(mask.allowed.all())


def test_random_ratio_one_opens_every_position():
    mask = build_sparse_mask(30, [], k=4, window=1, random_ratio=1.0, seed=5)
    assert bool(mask.allowed.all())


def test_disabled_components_fall_back_to_the_center():
    mask = build_sparse_mask(
        10, [0, 5], k=2, window=4, random_ratio=0.5, seed=0,
        local_window=False, global_tokens=False, random_tokens=False,
    )
    assert _visible(mask, 0) == {2}
    assert _visible(mask, 1) == {7}


def test_random_share_is_reproducible_per_seed():
    first = build_sparse_mask(60, [0, 20, 40], k=4, window=4, random_ratio=0.3, seed=11)
    again = build_sparse_mask(60, [0, 20, 40], k=4, window=4, random_ratio=0.3, seed=11)
    other = build_sparse_mask(60, [0, 20, 40], k=4, window=4, random_ratio=0.3, seed=12)
    assert torch.equal(first.allowed, again.allowed)
    assert not torch.equal(first.allowed, other.allowed)


def test_mask_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build_sparse_mask(10, [], k=2, window=0, random_ratio=0.0, seed=0)
    with pytest.raises(ValueError):
        build_sparse_mask(10, [], k=2, window=2, random_ratio=1.5, seed=0)


@settings(max_examples=50, deadline=None)
@given(
    length=st.integers(5, 60),
    k=st.integers(1, 8),
    window=st.integers(1, 20),
    ratio=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31),
    data=st.data(),
)
def test_sparse_weights_only_touch_visible_tokens(length, k, window, ratio, seed, data):
    sos = sorted(data.draw(st.sets(st.integers(0, length - 1), max_size=5)))
    mask = build_sparse_mask(length, sos, k=k, window=window, random_ratio=ratio, seed=seed)
    for position in sos:
        assert bool(mask.allowed[:, position].all())

    torch.manual_seed(seed % 1000)
    book = Codebook(k, 6, 4, init_std=1.0)
    _, weights = uhs(torch.randn(length, 6), book, mask, return_weights=True)
    assert torch.all(weights[~mask.allowed] == 0)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(k), atol=1e-5)


def test_saturated_mask_matches_full_attention():
    torch.manual_seed(0)
    for _ in range(100):
        length = int(torch.randint(4, 20, ()).item())
        book = Codebook(4, 8, 8, init_std=0.5)
        hidden = torch.randn(length, 8)
        mask = build_sparse_mask(length, [0], k=4, window=length, random_ratio=0.0, seed=0)
        assert torch.allclose(uhs(hidden, book, mask), uhs(hidden, book), atol=1e-6)


def test_masked_token_content_is_ignored():
    torch.manual_seed(1)
    book = Codebook(2, 8, 4, init_std=0.5)
    hidden = torch.randn(10, 8)
    mask = build_sparse_mask(10, [0, 5], k=2, window=2, random_ratio=0.0, seed=0)
    changed = hidden.clone()
    changed[9] = torch.randn(8) * 100
    assert torch.allclose(uhs(hidden, book, mask), uhs(changed, book, mask), atol=1e-7)


def test_poly_attend_matches_a_hand_computation():
    book = Codebook(1, 2, 2).double()
    with torch.no_grad():
        book.codes.copy_(torch.tensor([[1.0, -1.0]], dtype=torch.float64))
        book.projection.copy_(torch.eye(2, dtype=torch.float64))
    hidden = torch.tensor([[0.5, 0.2], [-0.3, 0.9]], dtype=torch.float64)

    scores = [math.tanh(x) - math.tanh(y) for x, y in hidden.tolist()]
    total = sum(math.exp(s) for s in scores)
    weights = [math.exp(s) / total for s in scores]
    expected = [sum(w * row[c] for w, row in zip(weights, hidden.tolist())) for c in range(2)]

    output = poly_attend(hidden, book)
    assert output.shape == (1, 2)
    assert output[0].tolist() == pytest.approx(expected, abs=1e-12)


def test_outputs_are_convex_combinations_of_rows():
    torch.manual_seed(2)
    book = Codebook(3, 4, 4, init_std=1.0)
    same = torch.tensor([1.0, -2.0, 0.5, 3.0]).repeat(6, 1)
    assert torch.allclose(poly_attend(same, book), same[:3], atol=1e-6)

    hidden = torch.randn(6, 4)
    output = poly_attend(hidden, book)
    assert torch.all(output <= hidden.max(dim=0).values + 1e-6)
    assert torch.all(output >= hidden.min(dim=0).values - 1e-6)


def test_uie_with_one_summary_returns_it():
    torch.manual_seed(3)
    summary = torch.randn(1, 8)
    assert torch.allclose(uie(summary, Codebook(1, 8, 4)), summary)


def test_ccs_ignores_padding():
    torch.manual_seed(4)
    book = Codebook(2, 8, 4, init_std=0.5)
    real = torch.randn(1, 3, 8)
    padded = torch.cat([real, torch.randn(1, 2, 8) * 50], dim=1)
    pad_mask = torch.tensor([[True, True, True, False, False]])
    assert torch.allclose(ccs(padded, book, pad_mask), ccs(real, book), atol=1e-6)


def test_poly_attend_rejects_wrong_width():
    with pytest.raises(DimensionError):
        poly_attend(torch.randn(5, 6), Codebook(2, 8, 4))


def test_entropy_examples():
    assert code_entropies(torch.full((1, 8), 1 / 8))[0] == pytest.approx(math.log(8), abs=1e-12)
    assert code_entropies(torch.tensor([[1.0, 0.0, 0.0]]))[0] == 0.0
    assert code_entropies(torch.tensor([[0.5, 0.25, 0.25]]))[0] == pytest.approx(1.5 * math.log(2), abs=1e-12)
    assert attention_entropy(torch.tensor([[1.0, 0.0], [0.5, 0.5]])) == pytest.approx(math.log(2) / 2)


def test_entropy_rejects_non_distributions():
    with pytest.raises(InvalidDistributionError) as excinfo:
        code_entropies(torch.tensor([[0.5, 0.5], [0.5, 0.4]]))
    assert excinfo.value.row == 1


def test_sparse_attention_is_more_focused_than_full():
    torch.manual_seed(5)
    length, sos = 64, list(range(0, 64, 8))
    lower = 0
    for case in range(100):
        book = Codebook(8, 16, 8)
        hidden = torch.randn(length, 16)
        mask = build_sparse_mask(length, sos, k=8, window=8, random_ratio=0.1, seed=case)
        _, sparse = uhs(hidden, book, mask, return_weights=True)
        _, full = uhs(hidden, book, return_weights=True)
        lower += attention_entropy(sparse) < attention_entropy(full)
    assert lower >= 95
