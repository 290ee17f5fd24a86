"""Differentiable kernels shared by every layer, plus a finite-difference checker.

Tensors are ``torch.Tensor`` values; autodiff is torch's dynamically recorded
reverse-mode graph. The helpers here add the shape and mask validation the
model relies on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import DimensionError, InvalidMaskError, NumericalError


class LrGroup(str, enum.Enum):
    BASE = "base"
    NEW_LAYER = "new_layer"


@dataclass(frozen=True)
class Parameter:
    """A named trainable tensor and the learning-rate group it belongs to."""

    name: str
    tensor: torch.nn.Parameter
    lr_group: LrGroup = LrGroup.NEW_LAYER


def collect_parameters(
    module: torch.nn.Module, base_prefixes: Sequence[str] = ("encoder.",)
) -> List[Parameter]:
    """
    Name every parameter of ``module`` and assign it a learning-rate group.

    Parameters under one of ``base_prefixes`` (the shared encoder, token
    embeddings included) form the base group; everything else is a new layer.
    """

    params: List[Parameter] = []
    seen = set()
    for name, tensor in module.named_parameters():
        if name in seen:
            raise ValueError(f"duplicate parameter name: {name}")
        seen.add(name)
        group = LrGroup.BASE if name.startswith(tuple(base_prefixes)) else LrGroup.NEW_LAYER
        params.append(Parameter(name=name, tensor=tensor, lr_group=group))
    return params


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product over the last two axes, with a named shape error."""

    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    return torch.matmul(a, b)


def softmax_rows(x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Softmax over the last axis. ``mask`` marks visible entries (True);
    hidden entries come out as exact zeros. Every row needs a visible entry.
    """

    if mask is None:
        return torch.softmax(x, dim=-1)
    if mask.shape != x.shape:
        mask = mask.expand_as(x)
    empty = ~mask.any(dim=-1)
    if bool(empty.any()):
        row = int(torch.nonzero(empty.reshape(-1))[0])
        raise InvalidMaskError(row)
    # torch.softmax subtracts the row max internally.
    weights = torch.softmax(x.masked_fill(~mask, float("-inf")), dim=-1)
    return weights.masked_fill(~mask, 0.0)


def tanh_map(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def gelu_map(x: torch.Tensor) -> torch.Tensor:
    """Exact gelu, x * Phi(x), not the tanh approximation."""

    return F.gelu(x, approximate="none")


def seed_everything(seed: int) -> torch.Generator:
    """Seed torch's global RNG and return a dedicated generator for sampling."""

    torch.manual_seed(seed)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-6,
    *,
    coords_per_param: int = 16,
    seed: int = 0,
) -> Dict[str, float]:
    """
    Compare backpropagated gradients with central differences.

    ``loss_fn`` must be deterministic and return a scalar tensor. For each
    parameter, up to ``coords_per_param`` coordinates are sampled and the
    maximum relative error ``|a - n| / max(|a|, |n|, 1e-8)`` is reported.
    """

    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for param in params:
        param.tensor.grad = None

    loss = loss_fn()
    _require_finite(loss, "loss")
    loss.backward()

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for param in params:
        analytic = (
            param.tensor.grad.detach().reshape(-1).clone()
            if param.tensor.grad is not None
            else torch.zeros(param.tensor.numel(), dtype=param.tensor.dtype)
        )
        flat = param.tensor.data.view(-1)
        count = flat.numel()
        if count <= coords_per_param:
            coords = np.arange(count)
        else:
            coords = rng.choice(count, size=coords_per_param, replace=False)

        worst = 0.0
        for index in coords.tolist():
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + eps
                plus = loss_fn()
                flat[index] = original - eps
                minus = loss_fn()
                flat[index] = original
            _require_finite(plus, param.name)
            _require_finite(minus, param.name)
            numeric = (plus.item() - minus.item()) / (2.0 * eps)
            exact = analytic[index].item()
            denominator = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denominator)
        errors[param.name] = worst
    return errors


def _require_finite(value: torch.Tensor, where: str) -> None:
    if not math.isfinite(float(value.detach())):
        raise NumericalError(f"non-finite loss while checking {where}: {float(value.detach())}")


__all__ = [
    "LrGroup",
    "Parameter",
    "collect_parameters",
    "gelu_map",
    "grad_check",
    "matmul",
    "seed_everything",
    "softmax_rows",
    "tanh_map",
]
