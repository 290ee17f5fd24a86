import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from polyrec.exceptions import DimensionError, InvalidMaskError, NumericalError
from polyrec.numerics import (
    LrGroup,
    Parameter,
    collect_parameters,
    gelu_map,
    grad_check,
    matmul,
    softmax_rows,
    tanh_map,
)
from polyrec.recommender import build_model
from polyrec.trainer import GRADCHECK_TOLERANCE, model_grad_check

from conftest import tiny_config


def test_matmul_identity_and_hand_product():
    eye = torch.eye(2)
    block = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert torch.equal(matmul(eye, block), block)
    assert matmul(torch.tensor([[1.0, 2.0]]), torch.tensor([[3.0], [4.0]])).item() == 11.0


def test_matmul_matches_triple_loop():
    torch.manual_seed(0)
    a, b = torch.randn(3, 4), torch.randn(4, 2)
    expected = torch.zeros(3, 2)
    for i in range(3):
        for j in range(2):
            expected[i, j] = sum(a[i, t] * b[t, j] for t in range(4))
    assert torch.allclose(matmul(a, b), expected, atol=1e-6)


def test_matmul_names_both_shapes():
    with pytest.raises(DimensionError) as excinfo:
        matmul(torch.zeros(2, 3), torch.zeros(2, 3))
    assert excinfo.value.shapes == ((2, 3), (2, 3))


def test_softmax_rows_examples():
    uniform = softmax_rows(torch.zeros(1, 3))
    assert torch.allclose(uniform, torch.full((1, 3), 1 / 3))

    survivor = softmax_rows(torch.tensor([[5.0, 5.0]]), torch.tensor([[True, False]]))
    assert survivor.tolist() == [[1.0, 0.0]]

    row = softmax_rows(torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64))
    expected = math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3))
    assert row[0, 2].item() == pytest.approx(expected, abs=1e-12)


def test_softmax_rows_rejects_fully_masked_row():
    mask = torch.tensor([[True, True], [False, False]])
    with pytest.raises(InvalidMaskError) as excinfo:
        softmax_rows(torch.zeros(2, 2), mask)
    assert excinfo.value.row == 1


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-30, 30), min_size=2, max_size=12),
    st.data(),
)
def test_softmax_rows_is_a_distribution_with_exact_zeros(values, data):
    mask_values = data.draw(st.lists(st.booleans(), min_size=len(values), max_size=len(values)))
    mask_values[data.draw(st.integers(0, len(values) - 1))] = True
    x = torch.tensor([values], dtype=torch.float32)
    mask = torch.tensor([mask_values])
    weights = softmax_rows(x, mask)
    assert abs(weights.sum().item() - 1.0) < 1e-6
    assert bool((weights >= 0).all())
    assert bool((weights[~mask] == 0).all())


def test_tanh_and_gelu():
    zero = torch.zeros(1)
    assert tanh_map(zero).item() == 0.0
    assert gelu_map(zero).item() == 0.0
    assert tanh_map(torch.tensor([20.0])).item() == pytest.approx(1.0, abs=1e-6)
    phi_one = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert gelu_map(torch.tensor([1.0], dtype=torch.float64)).item() == pytest.approx(phi_one, abs=1e-12)


def test_collect_parameters_splits_encoder_from_new_layers():
    model = build_model(tiny_config(), seed=1)
    params = collect_parameters(model)
    names = [param.name for param in params]
    assert len(names) == len(set(names))
    groups = {param.name: param.lr_group for param in params}
    assert groups["encoder.token_embedding.weight"] is LrGroup.BASE
    assert groups["uie_codebook.codes"] is LrGroup.NEW_LAYER
    assert groups["head.weight"] is LrGroup.NEW_LAYER


def test_grad_check_linear_sum():
    theta = torch.nn.Parameter(torch.randn(5, dtype=torch.float64))
    errors = grad_check(lambda: theta.sum(), [Parameter("theta", theta)])
    assert errors["theta"] < 1e-6


def test_grad_check_cross_entropy():
    logits = torch.nn.Parameter(torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64))

    def loss():
        return -torch.log_softmax(logits, dim=0)[1]

    assert grad_check(loss, [Parameter("logits", logits)])["logits"] < 1e-4


def test_grad_check_rejects_non_finite_loss():
    theta = torch.nn.Parameter(torch.ones(2, dtype=torch.float64))
    with pytest.raises(NumericalError):
        grad_check(lambda: theta.sum() * float("nan"), [Parameter("theta", theta)])


def test_grad_check_needs_positive_eps():
    theta = torch.nn.Parameter(torch.ones(2))
    with pytest.raises(ValueError):
        grad_check(lambda: theta.sum(), [Parameter("theta", theta)], eps=0.0)


def test_tiny_model_gradients_match_finite_differences():
    errors = model_grad_check(seed=1)
    assert "encoder.blocks.0.attention.query.weight" in errors
    assert "uhs_codebook.codes" in errors
    assert max(errors.values()) < GRADCHECK_TOLERANCE
