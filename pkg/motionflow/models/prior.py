"""Time-factorized Gaussian prior over per-frame latents.

``p(z) = prod_t N(z_t; mu_t, sigma_t)`` where ``(mu_t, log sigma_t)`` are a
function of the two previous latents ``(h_{t-2}, h_{t-1})``. The residual
network predicts the change ``mu_t - h_{t-1}``; ``h_{-1}`` and ``h_0`` are
learned, zero-initialized frames.
"""
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn
from einops import rearrange

from ..training.config import ModelConfig
from ..utils.errors import ShapeError
from ..utils.modeling import LOG_2PI, SameConv2d, concat, split

LOG_SIGMA_BOUND = 7.0


def gaussian_log_prob(z: torch.Tensor,
                      mu: Union[torch.Tensor, float],
                      sigma: Union[torch.Tensor, float],
                      batch_dims: int = 0) -> torch.Tensor:
    """Diagonal Gaussian log-density summed over all non-batch axes.

    Args:
        z: Values.
        mu: Means, broadcastable to ``z``.
        sigma: Standard deviations, strictly positive.
        batch_dims: Leading axes of ``z`` kept in the result.
    """
    sigma = torch.as_tensor(sigma, dtype=z.dtype, device=z.device)
    if (sigma <= 0).any():
        raise ValueError('gaussian_log_prob needs strictly positive sigma')
    log_p = -0.5 * ((z - mu) / sigma)**2 - sigma.log() - 0.5 * LOG_2PI
    return log_p.sum(dim=tuple(range(batch_dims, z.dim())))


def sample_latent(mu: torch.Tensor,
                  sigma: torch.Tensor,
                  temperature: float = 1.0,
                  generator: Optional[torch.Generator] = None,
                  seed: Optional[int] = None) -> torch.Tensor:
    """Draw ``mu + temperature * sigma * eps`` with standard normal ``eps``.

    ``temperature=0`` returns ``mu`` without touching the generator.
    """
    if temperature < 0:
        raise ValueError(f'temperature must be >= 0, got {temperature}')
    if temperature == 0:
        return mu.clone()
    if generator is None and seed is not None:
        generator = torch.Generator(device=mu.device).manual_seed(seed)
    eps = torch.randn(mu.shape,
                      generator=generator,
                      dtype=mu.dtype,
                      device=mu.device)
    return mu + temperature * sigma * eps


class GatedResidualBlock(nn.Module):
    """Dilated 3x3 conv, tanh/sigmoid gate, zero-initialized 3x3 conv, skip."""
    def __init__(self, channels: int, width: int, dilation: int):
        super().__init__()
        self.conv_in = SameConv2d(channels, width, 3, dilation)
        self.conv_tanh = SameConv2d(width, width, 1)
        self.conv_sigmoid = SameConv2d(width, width, 1)
        self.conv_out = SameConv2d(width, channels, 3, dilation, zero_init=True)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(u)
        h = torch.tanh(self.conv_tanh(h)) * torch.sigmoid(self.conv_sigmoid(h))
        return u + self.conv_out(h)


class DynamicPrior(nn.Module):
    """Autoregressive Gaussian prior over the latent frames.

    With ``use_residual_net=False`` the residual stack and ``conv_2`` are
    replaced by a single zero-initialized 3x3 convolution.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.frame_channels
        self.frame_shape = (c, 1, config.frame_width)
        # h_{-1} and h_0
        self.initial = nn.Parameter(torch.zeros(2, *self.frame_shape))
        self.conv_1 = SameConv2d(c, c, kernel_size=1)
        if config.use_residual_net:
            self.blocks = nn.ModuleList([
                GatedResidualBlock(2 * c, config.prior_width, d)
                for d in config.prior_dilations
            ])
            self.conv_2 = SameConv2d(2 * c, 2 * c, kernel_size=1, zero_init=True)
        else:
            self.blocks = None
            self.conv_2 = SameConv2d(2 * c, 2 * c, kernel_size=3, zero_init=True)

    def initial_context(self,
                        batch_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """``(h_{-1}, h_0)`` expanded to ``batch_size``."""
        h = self.initial.unsqueeze(1).expand(2, batch_size, *self.frame_shape)
        return h[0], h[1]

    def prior_params(
            self, h_prev2: torch.Tensor,
            h_prev1: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return ``(mu_t, log_sigma_t)`` given the two previous latents."""
        if h_prev2.shape != h_prev1.shape or tuple(
                h_prev1.shape[1:]) != self.frame_shape:
            raise ShapeError(f'prior contexts {tuple(h_prev2.shape)} and '
                             f'{tuple(h_prev1.shape)} must both be '
                             f'(B, {", ".join(map(str, self.frame_shape))})')
        u = concat(h_prev2, self.conv_1(h_prev1))
        if self.blocks is not None:
            for block in self.blocks:
                u = block(u)
        delta, log_sigma = split(self.conv_2(u))
        log_sigma = log_sigma.clamp(-LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
        return delta + h_prev1, log_sigma

    def contexts(self,
                 frames: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Shifted histories ``(h_{t-2}, h_{t-1})`` for t = 1..V.

        Args:
            frames: Latents of shape (B, V, C, 1, W).
        """
        b, v = frames.shape[:2]
        h_m1, h_0 = self.initial_context(b)
        history = torch.cat((h_m1.unsqueeze(1), h_0.unsqueeze(1), frames),
                            dim=1)
        return history[:, :v], history[:, 1:v + 1]

    def log_prob(self, frames: torch.Tensor) -> torch.Tensor:
        """Log-density of latents (B, V, C, 1, W), one value per sample.

        All frames are scored in parallel since every context is observed.
        """
        b, v = frames.shape[:2]
        h_prev2, h_prev1 = self.contexts(frames)
        mu, log_sigma = self.prior_params(
            rearrange(h_prev2, 'b v c h w -> (b v) c h w'),
            rearrange(h_prev1, 'b v c h w -> (b v) c h w'))
        z = rearrange(frames, 'b v c h w -> (b v) c h w')
        log_p = gaussian_log_prob(z, mu, log_sigma.exp(), batch_dims=1)
        return log_p.view(b, v).sum(dim=1)


class StandardNormalPrior(nn.Module):
    """Fixed N(0, I) over every latent frame."""
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.frame_shape = (config.frame_channels, 1, config.frame_width)
        self.register_buffer('initial',
                             torch.zeros(2, *self.frame_shape),
                             persistent=False)

    def initial_context(self,
                        batch_size: int) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.initial.unsqueeze(1).expand(2, batch_size, *self.frame_shape)
        return h[0], h[1]

    def prior_params(
            self, h_prev2: torch.Tensor,
            h_prev1: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        zeros = torch.zeros_like(h_prev1)
        return zeros, zeros

    def log_prob(self, frames: torch.Tensor) -> torch.Tensor:
        return gaussian_log_prob(frames, 0.0, 1.0, batch_dims=1)


def build_prior(config: ModelConfig) -> nn.Module:
    if config.use_dynamic_prior:
        return DynamicPrior(config)
    return StandardNormalPrior(config)
