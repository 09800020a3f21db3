"""Tensor helpers shared by the conditioner, flow and prior.

All functions operate on batch-first tensors laid out as ``(B, C, H, W)``.
Differentiation is provided by torch autograd; :func:`gradient_check` and
:func:`finite_difference_jacobian` certify it against central differences.
"""
import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import GradientCheckError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


def conv2d(input: torch.Tensor,
           weight: torch.Tensor,
           bias: Optional[torch.Tensor] = None,
           dilation: int = 1) -> torch.Tensor:
    """Cross-correlation with 'same' padding.

    Args:
        input: Tensor of shape (B, C_in, H, W).
        weight: Tensor of shape (C_out, C_in, k, k) with k odd.
        bias: Optional tensor of shape (C_out,).
        dilation: Dilation rate, at least 1.

    Returns:
        Tensor of shape (B, C_out, H, W).
    """
    if input.dim() != 4 or weight.dim() != 4:
        raise ShapeError(
            f'conv2d expects 4-d input and weight, got {tuple(input.shape)} '
            f'and {tuple(weight.shape)}')
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f'conv2d needs an odd square kernel, got {kh}x{kw}')
    if input.size(1) != c_in:
        raise ShapeError(f'conv2d input has {input.size(1)} channels, '
                         f'weight expects {c_in}')
    if bias is not None and bias.shape != (c_out, ):
        raise ShapeError(f'conv2d bias shape {tuple(bias.shape)} does not '
                         f'match {c_out} output channels')
    if dilation < 1:
        raise ShapeError(f'dilation must be >= 1, got {dilation}')
    return F.conv2d(input,
                    weight,
                    bias,
                    padding=dilation * (kh // 2),
                    dilation=dilation)


def linear(input: torch.Tensor,
           weight: torch.Tensor,
           bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Affine map ``weight @ input + bias`` over the last axis."""
    if weight.dim() != 2 or input.size(-1) != weight.size(1):
        raise ShapeError(f'linear cannot apply weight {tuple(weight.shape)} '
                         f'to input {tuple(input.shape)}')
    if bias is not None and bias.shape != (weight.size(0), ):
        raise ShapeError(f'linear bias shape {tuple(bias.shape)} does not '
                         f'match {weight.size(0)} outputs')
    return F.linear(input, weight, bias)


def pono(input: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Positional normalization across the channel axis.

    At every spatial position the channel vector is centred and divided by
    its (population) standard deviation plus ``eps``. The deviation is
    ``sqrt(var + eps**2)``, differentiable at zero variance (C=1 included).
    """
    mean = input.mean(dim=1, keepdim=True)
    var = input.var(dim=1, keepdim=True, unbiased=False)
    std = (var + eps**2).sqrt()
    return (input - mean) / (std + eps)


def soft_clamp(input: torch.Tensor, bound: float = 1.9) -> torch.Tensor:
    """Smoothly squash values into (-bound, bound)."""
    return bound * torch.tanh(input / bound)


def split(input: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """First-half / second-half partition of the channel axis."""
    if input.size(1) % 2 != 0:
        raise ShapeError(f'split needs an even channel count, '
                         f'got {input.size(1)}')
    return input.chunk(2, dim=1)


def concat(first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`split`."""
    return torch.cat((first, second), dim=1)


def cross(input: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Even-index / odd-index partition of the channel axis."""
    if input.size(1) % 2 != 0:
        raise ShapeError(f'cross needs an even channel count, '
                         f'got {input.size(1)}')
    return input[:, 0::2], input[:, 1::2]


def uncross(even: torch.Tensor, odd: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`cross`: interleave two halves channel by channel."""
    return rearrange(torch.stack((even, odd)), 'two b c ... -> b (c two) ...')


def zero_init_(module: nn.Module) -> nn.Module:
    """Zero the weight and bias of a layer in place and return it."""
    nn.init.zeros_(module.weight)
    if module.bias is not None:
        nn.init.zeros_(module.bias)
    return module


class SameConv2d(nn.Conv2d):
    """Conv2d with 'same' padding routed through :func:`conv2d`."""
    def __init__(self,
                 in_channels: int,
                 out_channels: int,
                 kernel_size: int = 3,
                 dilation: int = 1,
                 zero_init: bool = False):
        super().__init__(in_channels,
                         out_channels,
                         kernel_size,
                         dilation=dilation,
                         padding=dilation * (kernel_size // 2))
        if zero_init:
            zero_init_(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, self.dilation[0])


def check_finite(name: str, tensor: torch.Tensor) -> torch.Tensor:
    """Raise :class:`NonFiniteError` naming ``tensor`` if it holds NaN/Inf."""
    if not torch.isfinite(tensor).all():
        raise NonFiniteError(name)
    return tensor


@dataclass
class GradientMismatch:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float


@dataclass
class GradientCheckReport:
    """Outcome of :func:`gradient_check`.

    Attributes:
        max_relative_error: Largest relative error over all checked coordinates.
        num_checked: Number of parameter coordinates compared.
        tolerance: Relative tolerance the check was run with.
        failures: Coordinates whose relative error exceeded the tolerance.
            A non-finite gradient on either side counts as an infinite error.
    """
    max_relative_error: float = 0.0
    num_checked: int = 0
    tolerance: float = 1e-3
    failures: List[GradientMismatch] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def raise_for_failure(self) -> None:
        if self.failures:
            worst = max(self.failures, key=lambda f: f.relative_error)
            raise GradientCheckError(
                f'{len(self.failures)} of {self.num_checked} coordinates exceed '
                f'tolerance {self.tolerance:g}; worst is {worst.name}'
                f'{list(worst.index)}: analytic={worst.analytic:.6e} '
                f'numeric={worst.numeric:.6e} rel={worst.relative_error:.3e}')


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    if not (math.isfinite(analytic) and math.isfinite(numeric)):
        return math.inf
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@torch.no_grad()
def _central_difference(loss_fn: Callable[[], torch.Tensor],
                        tensor: torch.Tensor, index: Tuple[int, ...],
                        step: float) -> float:
    original = tensor[index].item()
    tensor[index] = original + step
    plus = loss_fn().item()
    tensor[index] = original - step
    minus = loss_fn().item()
    tensor[index] = original
    return (plus - minus) / (2 * step)


def gradient_check(loss_fn: Callable[[], torch.Tensor],
                   params: Iterable[Tuple[str, torch.Tensor]],
                   step: float = 1e-5,
                   tolerance: float = 1e-3,
                   num_coordinates: Optional[int] = None,
                   generator: Optional[torch.Generator] = None,
                   floor: float = 1e-6) -> GradientCheckReport:
    """Compare autograd gradients with central finite differences.

    Args:
        loss_fn: Zero-argument callable returning a scalar tensor. It is
            re-evaluated after every in-place perturbation of a parameter.
        params: ``(name, tensor)`` pairs, e.g. ``module.named_parameters()``.
            Every tensor must require grad.
        step: Finite-difference step.
        tolerance: Maximum accepted relative error.
        num_coordinates: If set, check only this many coordinates drawn
            uniformly over all parameters; otherwise check every coordinate.
        generator: Random source for coordinate sampling.
        floor: Lower bound of the relative-error denominator so that
            vanishing gradients are compared in absolute terms.

    Returns:
        A :class:`GradientCheckReport`.
    """
    named = [(name, p) for name, p in params if p.requires_grad]
    if not named:
        raise ValueError('gradient_check needs at least one trainable tensor')
    if any(p.dtype != torch.float64 for _, p in named):
        logger.warning('gradient_check is only meaningful at 64-bit precision')

    loss = loss_fn()
    if loss.dim() != 0:
        raise ShapeError(f'loss_fn must return a scalar, got {tuple(loss.shape)}')
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    sizes = torch.tensor([p.numel() for _, p in named])
    total = int(sizes.sum())
    if num_coordinates is None or num_coordinates >= total:
        flat_indices = torch.arange(total)
    else:
        flat_indices = torch.randperm(total,
                                      generator=generator)[:num_coordinates]
        flat_indices, _ = flat_indices.sort()
    offsets = (torch.cumsum(sizes, 0) - sizes).tolist()

    report = GradientCheckReport(tolerance=tolerance)
    for flat in flat_indices.tolist():
        which = bisect.bisect_right(offsets, flat) - 1
        name, param = named[which]
        local = flat - offsets[which]
        index = tuple(int(i) for i in np.unravel_index(local, param.shape))
        grad = grads[which]
        analytic = 0.0 if grad is None else grad[index].item()
        numeric = _central_difference(loss_fn, param.data, index, step)
        rel = _relative_error(analytic, numeric, floor)
        report.num_checked += 1
        report.max_relative_error = max(report.max_relative_error, rel)
        if not rel <= tolerance:
            report.failures.append(
                GradientMismatch(name, index, analytic, numeric, rel))
    logger.debug('gradient check: %d coordinates, max rel error %.3e',
                 report.num_checked, report.max_relative_error)
    return report


@torch.no_grad()
def finite_difference_jacobian(fn: Callable[[torch.Tensor], torch.Tensor],
                               input: torch.Tensor,
                               step: float = 1e-5) -> torch.Tensor:
    """Dense Jacobian of ``fn`` at ``input`` by central differences.

    Returns:
        Tensor of shape (fn(input).numel(), input.numel()).
    """
    flat = input.detach().reshape(-1).clone()
    columns = []
    for i in range(flat.numel()):
        plus = flat.clone()
        plus[i] += step
        minus = flat.clone()
        minus[i] -= step
        diff = fn(plus.view_as(input)) - fn(minus.view_as(input))
        columns.append(diff.reshape(-1) / (2 * step))
    return torch.stack(columns, dim=1)
