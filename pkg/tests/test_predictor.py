import math

import pytest
import torch

from polyrec.exceptions import DimensionError
from polyrec.predictor import ScoreHead, match_scores, nce_loss, relevance_score


def test_match_scores_examples():
    e1 = torch.tensor([[1.0, 0.0]])
    assert match_scores(e1, e1).tolist() == [1.0]
    assert match_scores(torch.eye(2), torch.tensor([[2.0, 3.0]])).tolist() == [2.0, 3.0]
    assert match_scores(e1, torch.tensor([[0.0, 1.0]])).tolist() == [0.0]


def test_match_scores_order_is_user_major():
    user = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    candidate = torch.tensor([[2.0, 5.0], [7.0, 3.0]])
    assert match_scores(user, candidate).tolist() == [2.0, 7.0, 5.0, 3.0, 7.0, 10.0]


def test_match_scores_rejects_width_mismatch():
    with pytest.raises(DimensionError):
        match_scores(torch.randn(2, 3), torch.randn(2, 4))


def test_single_code_score_is_the_inner_product():
    torch.manual_seed(0)
    head = ScoreHead(8)
    user = torch.randn(1000, 1, 8)
    candidate = torch.randn(1000, 1, 8)
    score = relevance_score(user, candidate, head)
    assert torch.equal(score, match_scores(user, candidate)[..., 0])
    assert torch.allclose(score, (user * candidate).sum(dim=(-1, -2)), atol=1e-5)


def test_score_matches_a_scalar_computation():
    torch.manual_seed(1)
    head = ScoreHead(3, init_std=1.0).double()
    user = torch.randn(2, 3, dtype=torch.float64)
    candidate = torch.randn(1, 3, dtype=torch.float64)

    def gelu(x):
        return 0.5 * x * (1 + math.erf(x / math.sqrt(2)))

    lam = candidate[0].tolist()
    w = head.weight.tolist()
    gate = [gelu(sum(lam[i] * w[i][j] for i in range(3))) for j in range(3)]
    matches = [sum(g * l for g, l in zip(row, lam)) for row in user.tolist()]
    logits = [sum(g * q for g, q in zip(row, gate)) for row in user.tolist()]
    total = sum(math.exp(v) for v in logits)
    expected = sum(math.exp(v) / total * k for v, k in zip(logits, matches))

    assert relevance_score(user, candidate, head).item() == pytest.approx(expected, abs=1e-12)


def test_score_ignores_user_code_order():
    torch.manual_seed(2)
    head = ScoreHead(4, init_std=0.5).double()
    user = torch.randn(3, 4, dtype=torch.float64)
    candidate = torch.randn(2, 4, dtype=torch.float64)
    shuffled = user[[2, 0, 1]]
    assert relevance_score(shuffled, candidate, head).item() == pytest.approx(
        relevance_score(user, candidate, head).item(), abs=1e-12
    )


def test_score_broadcasts_candidates_against_one_user():
    torch.manual_seed(3)
    head = ScoreHead(4)
    user = torch.randn(2, 1, 3, 4)
    candidates = torch.randn(2, 5, 2, 4)
    batched = relevance_score(user, candidates, head)
    assert batched.shape == (2, 5)
    single = relevance_score(user[1, 0], candidates[1, 3], head)
    assert torch.allclose(batched[1, 3], single, atol=1e-6)


def test_nce_loss_examples():
    assert nce_loss(torch.tensor(0.0), torch.zeros(4)).item() == pytest.approx(math.log(5), abs=1e-6)
    assert nce_loss(torch.tensor(100.0), torch.zeros(4)).item() == pytest.approx(0.0, abs=1e-6)
    expected = -math.log(math.e / (math.e + 2))
    assert nce_loss(torch.tensor(1.0), torch.tensor([0.0, 0.0])).item() == pytest.approx(expected, abs=1e-6)


def test_nce_loss_averages_over_the_batch():
    positive = torch.tensor([0.0, 1.0])
    negatives = torch.tensor([[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    both = nce_loss(positive, negatives).item()
    assert both == pytest.approx(
        (nce_loss(positive[0], negatives[0]).item() + nce_loss(positive[1], negatives[1]).item()) / 2,
        abs=1e-6,
    )
    assert nce_loss(positive[1], negatives[1]).item() < nce_loss(positive[0], negatives[0]).item()


def test_nce_loss_needs_a_negative():
    with pytest.raises(ValueError):
        nce_loss(torch.tensor(0.0), torch.zeros(0))
