"""Spatio-temporal conditioner.

Maps an input sequence ``x`` of shape (B, C_x, U, N) to the parameters of
every flow step. Two locally masked autoregressive networks, one per
ordering, are multiplied and fused with ``x`` into a context map ``u``;
separate heads per flow step then read ``u`` to produce the actnorm
scale/bias, the LU factors of the channel mixing and the coupling context.
"""
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..training.config import SQUEEZE_FACTOR, ModelConfig
from ..utils.errors import ConfigError, ShapeError
from ..utils.modeling import (SameConv2d, linear, pono, soft_clamp, split,
                              zero_init_)
from .data_types import ConditioningBundle, StepConditioning
from .masking import LocallyMaskedConv2d


class AutoregressiveNetwork(nn.Module):
    """Three locally masked convolutions under one ordering.

    The first layer is exclusive, the next two inclusive (the last one
    dilated), so output cell i only depends on input cells ranked before i.
    """
    def __init__(self,
                 in_channels: int,
                 ordering: str,
                 grid: Tuple[int, int],
                 hidden_channels: Sequence[int] = (32, 16),
                 kernel_size: int = 3,
                 dilation: int = 2):
        super().__init__()
        first, second = hidden_channels
        self.grid = tuple(grid)
        self.ordering = ordering
        self.layers = nn.ModuleList([
            LocallyMaskedConv2d(in_channels,
                                first,
                                ordering,
                                grid,
                                kernel_size,
                                dilation=1,
                                inclusive=False),
            LocallyMaskedConv2d(first,
                                second,
                                ordering,
                                grid,
                                kernel_size,
                                dilation=1,
                                inclusive=True),
            LocallyMaskedConv2d(second,
                                2 * in_channels,
                                ordering,
                                grid,
                                kernel_size,
                                dilation=dilation,
                                inclusive=True),
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[-2:]) != self.grid:
            raise ShapeError(f'input grid {tuple(x.shape[-2:])} does not match '
                             f'the compiled {self.ordering} grid {self.grid}')
        for i, layer in enumerate(self.layers):
            if i > 0:
                x = F.elu(x)
            x = layer(x)
        return x


class PlainConditioner(nn.Module):
    """Unmasked replacement trunk used when the masked conditioner is off."""
    def __init__(self, in_channels: int, width: int = 256):
        super().__init__()
        self.conv_in = SameConv2d(in_channels, width)
        self.conv_out = SameConv2d(width, 2 * in_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv_out(F.elu(self.conv_in(x)))


class FullyConnectedHead(nn.Module):
    """Linear -> ReLU -> Linear -> ReLU -> zero-initialized Linear."""
    def __init__(self, in_features: int, hidden: int, out_features: int):
        super().__init__()
        self.layers = nn.ModuleList([
            nn.Linear(in_features, hidden),
            nn.Linear(hidden, hidden),
            zero_init_(nn.Linear(hidden, out_features)),
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = linear(x, layer.weight, layer.bias)
            if i < last:
                x = F.relu(x)
        return x


class ContextNetwork(nn.Module):
    """Conv stack producing the coupling context of one flow step.

    The (U, N) map is averaged over time and pooled over each group of
    entities that the squeeze folds into one frame column, giving a
    (C_y/4, 1, N/4) map aligned with the squeezed frame.
    """
    def __init__(self, in_channels: int, hidden: int, frame_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            SameConv2d(in_channels, hidden),
            nn.ReLU(),
            SameConv2d(hidden, frame_channels // 2),
            nn.ReLU(),
            SameConv2d(frame_channels // 2,
                       frame_channels // 4,
                       zero_init=True),
        )

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        out = self.net(u).mean(dim=2, keepdim=True)
        return F.avg_pool2d(out, kernel_size=(1, SQUEEZE_FACTOR))


class SpatioTemporalConditioner(nn.Module):
    """Builds a :class:`ConditioningBundle` from an input sequence.

    Args:
        config: Model configuration. ``use_masked_conditioner`` selects the
            two masked autoregressive networks or the plain trunk.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        c_x = config.x_channels
        c_y = config.frame_channels
        if c_y % 4 != 0:
            raise ConfigError(f'frame channels {c_y} must be divisible by 4')
        self.grid = (config.input_steps, config.num_entities)
        self.x_channels = c_x
        self.frame_channels = c_y
        self.num_flow_steps = config.num_flow_steps

        if config.use_masked_conditioner:
            self.arn = nn.ModuleList([
                AutoregressiveNetwork(c_x, ordering, self.grid,
                                      config.arn_channels, config.arn_kernel,
                                      config.arn_dilation)
                for ordering in ('time_major_s_curve', 'entity_major_s_curve')
            ])
            self.trunk = None
        else:
            self.arn = None
            self.trunk = PlainConditioner(c_x, config.plain_conditioner_width)

        in_features = config.conditioner_features
        self.actnorm_heads = nn.ModuleList([
            FullyConnectedHead(in_features, config.fc_hidden, 2 * c_y)
            for _ in range(config.num_flow_steps)
        ])
        self.mixing_heads = nn.ModuleList([
            FullyConnectedHead(in_features, config.fc_hidden, c_y * c_y)
            for _ in range(config.num_flow_steps)
        ])
        self.context_nets = nn.ModuleList([
            ContextNetwork(c_x, config.context_hidden, c_y)
            for _ in range(config.num_flow_steps)
        ])

    def arn_forward(self, x: torch.Tensor, which: int) -> torch.Tensor:
        """Run ARN_1 (time-major) or ARN_2 (entity-major) on ``x``."""
        if self.arn is None:
            raise ConfigError('the masked conditioner is disabled')
        if which not in (1, 2):
            raise ValueError(f'which must be 1 or 2, got {which}')
        return self.arn[which - 1](x)

    def fuse_context(self,
                     x: torch.Tensor,
                     arn1_out: torch.Tensor,
                     arn2_out: Optional[torch.Tensor] = None) -> torch.Tensor:
        """u = x + pono(c1) * sigmoid(c2) with c1, c2 = split(arn1 * arn2).

        Without ``arn2_out`` the single trunk output is split directly.
        """
        if arn2_out is None:
            product = arn1_out
        else:
            if arn1_out.shape != arn2_out.shape:
                raise ShapeError(f'ARN outputs disagree: {tuple(arn1_out.shape)} '
                                 f'vs {tuple(arn2_out.shape)}')
            product = arn1_out * arn2_out
        expected = (x.size(0), 2 * x.size(1), *x.shape[2:])
        if tuple(product.shape) != expected:
            raise ShapeError(f'conditioner features {tuple(product.shape)} do '
                             f'not match {expected} required by x')
        c1, c2 = split(product)
        return x + pono(c1) * torch.sigmoid(c2)

    def context(self, x: torch.Tensor) -> torch.Tensor:
        if self.arn is not None:
            return self.fuse_context(x, self.arn_forward(x, 1),
                                     self.arn_forward(x, 2))
        return self.fuse_context(x, self.trunk(x))

    def actnorm_params(self, u: torch.Tensor,
                       k: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """Actnorm ``(log_scale, bias)`` of step ``k``; ``s = exp(log_scale)``."""
        raw = self.actnorm_heads[k](u.flatten(1))
        log_scale, bias = raw.chunk(2, dim=1)
        return soft_clamp(log_scale), bias

    def mixing_params(
            self, u: torch.Tensor,
            k: int) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """LU factors ``(lower, upper, log_diag)`` of step ``k``'s mixing matrix."""
        c = self.frame_channels
        raw = self.mixing_heads[k](u.flatten(1)).view(-1, c, c)
        lower = raw.tril(-1)
        upper = raw.triu(1)
        log_diag = soft_clamp(raw.diagonal(dim1=1, dim2=2))
        return lower, upper, log_diag

    def coupling_context(self, u: torch.Tensor, k: int) -> torch.Tensor:
        return self.context_nets[k](u)

    def forward(self, x: torch.Tensor) -> ConditioningBundle:
        """
        Args:
            x: Input sequence of shape (B, C_x, U, N).
        """
        if x.dim() != 4 or x.size(1) != self.x_channels or tuple(
                x.shape[2:]) != self.grid:
            raise ShapeError(f'expected x of shape (B, {self.x_channels}, '
                             f'{self.grid[0]}, {self.grid[1]}), '
                             f'got {tuple(x.shape)}')
        u = self.context(x)
        steps = []
        for k in range(self.num_flow_steps):
            log_scale, bias = self.actnorm_params(u, k)
            lower, upper, log_diag = self.mixing_params(u, k)
            steps.append(
                StepConditioning(log_scale=log_scale,
                                 bias=bias,
                                 lower=lower,
                                 upper=upper,
                                 log_diag=log_diag,
                                 context=self.coupling_context(u, k)))
        return ConditioningBundle(u=u, steps=steps)
