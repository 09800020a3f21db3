"""Conditional per-frame bijection.

A frame of shape (B, D, 1, N) is squeezed to (B, 4D, 1, N/4) and pushed
through K steps of actnorm -> invertible channel mixing -> affine coupling.
Every step reads its parameters from a :class:`StepConditioning`, so the
flow has no parameters of its own apart from the coupling networks.

Step arithmetic runs in float64 whatever the model precision; the
coupling networks run in their own dtype.
"""
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange

from ..training.config import SQUEEZE_FACTOR, ModelConfig
from ..utils.errors import ShapeError
from ..utils.modeling import SameConv2d, concat, cross, soft_clamp, split
from .data_types import ConditioningBundle, StepConditioning


def squeeze(frame: torch.Tensor, factor: int = SQUEEZE_FACTOR) -> torch.Tensor:
    """Fold groups of ``factor`` adjacent entities into the channel axis."""
    if frame.size(-1) % factor != 0:
        raise ShapeError(f'entity width {frame.size(-1)} is not divisible by '
                         f'the squeeze factor {factor}')
    return rearrange(frame, 'b d h (m f) -> b (d f) h m', f=factor)


def unsqueeze(frame: torch.Tensor,
              factor: int = SQUEEZE_FACTOR) -> torch.Tensor:
    if frame.size(1) % factor != 0:
        raise ShapeError(f'channel count {frame.size(1)} is not divisible by '
                         f'the squeeze factor {factor}')
    return rearrange(frame, 'b (d f) h m -> b d h (m f)', f=factor)


def _spatial(x: torch.Tensor) -> int:
    return x.size(2) * x.size(3)


def _module_dtype(module: nn.Module) -> Optional[torch.dtype]:
    param = next(module.parameters(), None)
    return None if param is None else param.dtype


def actnorm(x: torch.Tensor,
            log_scale: torch.Tensor,
            bias: torch.Tensor,
            reverse: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """Per-channel affine map ``y = exp(log_scale) * x + bias``.

    Returns:
        The transformed tensor and the log-determinant per sample
        (negated when ``reverse``).
    """
    log_scale = log_scale[:, :, None, None]
    bias = bias[:, :, None, None]
    logdet = _spatial(x) * log_scale.sum(dim=(1, 2, 3))
    if reverse:
        return (x - bias) * torch.exp(-log_scale), -logdet
    return x * torch.exp(log_scale) + bias, logdet


def mixing_matrix(lower: torch.Tensor, upper: torch.Tensor,
                  log_diag: torch.Tensor) -> torch.Tensor:
    """Assemble ``W = (I + lower) @ (upper + diag(exp(log_diag)))``."""
    eye = torch.eye(lower.size(-1), dtype=lower.dtype, device=lower.device)
    return (eye + lower) @ (upper + torch.diag_embed(log_diag.exp()))


def inv_mixing(x: torch.Tensor,
               lower: torch.Tensor,
               upper: torch.Tensor,
               log_diag: torch.Tensor,
               reverse: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """Multiply the channel vector at every position by the LU-factored W.

    The inverse solves the two triangular systems instead of inverting W.
    """
    logdet = _spatial(x) * log_diag.sum(dim=1)
    if not reverse:
        weight = mixing_matrix(lower, upper, log_diag)
        return torch.einsum('bij,bjhw->bihw', weight, x), logdet

    b, c, h, w = x.shape
    eye = torch.eye(c, dtype=x.dtype, device=x.device)
    rhs = x.reshape(b, c, h * w)
    rhs = torch.linalg.solve_triangular(eye + lower,
                                        rhs,
                                        upper=False,
                                        unitriangular=True)
    rhs = torch.linalg.solve_triangular(upper +
                                        torch.diag_embed(log_diag.exp()),
                                        rhs,
                                        upper=True)
    return rhs.view(b, c, h, w), -logdet


class CouplingNetwork(nn.Module):
    """3x3 conv -> ReLU -> 1x1 conv -> ReLU -> zero-initialized 3x3 conv."""
    def __init__(self, frame_channels: int, hidden: int = 128):
        super().__init__()
        in_channels = frame_channels // 2 + frame_channels // 4
        self.net = nn.Sequential(
            SameConv2d(in_channels, hidden, kernel_size=3),
            nn.ReLU(),
            SameConv2d(hidden, hidden, kernel_size=1),
            nn.ReLU(),
            SameConv2d(hidden, frame_channels, kernel_size=3, zero_init=True),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


def affine_coupling(x: torch.Tensor,
                    context: torch.Tensor,
                    net: nn.Module,
                    reverse: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """Transform the second channel half with scale/shift read off the first.

    ``net`` sees ``concat(x_1, context)`` and its output is split into even
    channels (raw log-scale) and odd channels (shift).
    """
    if x.size(1) % 2 != 0:
        raise ShapeError(f'coupling needs an even channel count, '
                         f'got {x.size(1)}')
    x1, x2 = split(x)
    h = concat(x1, context.to(x.dtype))
    out = net(h.to(_module_dtype(net) or h.dtype)).to(x.dtype)
    raw_scale, shift = cross(out)
    log_scale = soft_clamp(raw_scale)
    logdet = log_scale.sum(dim=(1, 2, 3))
    if reverse:
        return concat(x1, (x2 - shift) * torch.exp(-log_scale)), -logdet
    return concat(x1, x2 * torch.exp(log_scale) + shift), logdet


class FlowStep(nn.Module):
    """actnorm -> mixing -> coupling, with the coupling network of step k."""
    def __init__(self, frame_channels: int, hidden: int = 128):
        super().__init__()
        self.coupling = CouplingNetwork(frame_channels, hidden)

    def forward(self, x: torch.Tensor, params: StepConditioning):
        x, d1 = actnorm(x, params.log_scale, params.bias)
        x, d2 = inv_mixing(x, params.lower, params.upper, params.log_diag)
        x, d3 = affine_coupling(x, params.context, self.coupling)
        return x, d1 + d2 + d3

    def reverse(self, x: torch.Tensor, params: StepConditioning):
        x, _ = affine_coupling(x, params.context, self.coupling, reverse=True)
        x, _ = inv_mixing(x,
                          params.lower,
                          params.upper,
                          params.log_diag,
                          reverse=True)
        x, _ = actnorm(x, params.log_scale, params.bias, reverse=True)
        return x


STEP_DTYPE = torch.float64


class ConditionalFlow(nn.Module):
    """Squeeze followed by K conditional flow steps.

    Args:
        config: Model configuration; ``num_flow_steps`` and
            ``coupling_hidden`` size the flow.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.frame_channels = config.frame_channels
        self.steps = nn.ModuleList([
            FlowStep(config.frame_channels, config.coupling_hidden)
            for _ in range(config.num_flow_steps)
        ])

    def _check(self, x: torch.Tensor, bundle: ConditioningBundle) -> None:
        if bundle.batch_size != x.size(0):
            raise ShapeError(f'bundle holds {bundle.batch_size} samples, '
                             f'frames hold {x.size(0)}')
        if len(bundle.steps) != len(self.steps):
            raise ShapeError(f'bundle has {len(bundle.steps)} steps, '
                             f'flow has {len(self.steps)}')

    def forward(self, frame: torch.Tensor,
                bundle: ConditioningBundle) -> Tuple[torch.Tensor, torch.Tensor]:
        """Map frames (B, D, 1, N) to latents (B, 4D, 1, N/4) and logdet (B,)."""
        self._check(frame, bundle)
        z = squeeze(frame)
        if z.size(1) != self.frame_channels:
            raise ShapeError(f'squeezed frame has {z.size(1)} channels, '
                             f'flow expects {self.frame_channels}')
        dtype = z.dtype
        z = z.to(STEP_DTYPE)
        logdet = torch.zeros(z.size(0), dtype=STEP_DTYPE, device=z.device)
        for step, params in zip(self.steps, bundle.steps):
            z, step_logdet = step(z, params.to(STEP_DTYPE))
            logdet = logdet + step_logdet
        return z.to(dtype), logdet.to(dtype)

    def step_logdets(self, frame: torch.Tensor,
                     bundle: ConditioningBundle) -> List[torch.Tensor]:
        """Per-step log-determinants of :meth:`forward`."""
        self._check(frame, bundle)
        z = squeeze(frame).to(STEP_DTYPE)
        logdets = []
        for step, params in zip(self.steps, bundle.steps):
            z, step_logdet = step(z, params.to(STEP_DTYPE))
            logdets.append(step_logdet.to(frame.dtype))
        return logdets

    def inverse(self, z: torch.Tensor,
                bundle: ConditioningBundle) -> torch.Tensor:
        """Exact inverse of :meth:`forward`."""
        self._check(z, bundle)
        dtype = z.dtype
        z = z.to(STEP_DTYPE)
        for step, params in zip(reversed(self.steps), reversed(bundle.steps)):
            z = step.reverse(z, params.to(STEP_DTYPE))
        return unsqueeze(z.to(dtype))
