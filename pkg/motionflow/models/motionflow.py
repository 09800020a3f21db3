import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
from einops import rearrange
from transformers.modeling_outputs import ModelOutput

from ..training.config import ModelConfig
from ..utils.errors import ShapeError
from ..utils.modeling import check_finite
from ..utils.utils import resolve_dtype
from .conditioner import SpatioTemporalConditioner
from .data_types import ConditioningBundle, LatentSequence
from .flow import ConditionalFlow
from .loss import FlowNLLLoss
from .prior import build_prior, gaussian_log_prob, sample_latent

logger = logging.getLogger(__name__)

PREDICT_MODES = ('mean', 'sample', 'average')


@dataclass
class MotionFlowOutput(ModelOutput):
    """Output of :meth:`MotionFlow.forward`.

    Attributes:
        loss (`torch.FloatTensor`): Batch-mean NLL in nats per dimension.
        log_prob (`torch.FloatTensor`): Prior log-density of the latents, per sample.
        padding_log_prob (`torch.FloatTensor`): N(0, 1) log-density of the noise
            standing in for padded entities, per sample; zero without padding.
        logdet (`torch.FloatTensor`): Flow log-determinant over all frames, per sample.
        latents (`torch.FloatTensor`): Latent frames of shape (B, V, C_y, 1, N_f).
    """

    loss: Optional[torch.FloatTensor] = None
    log_prob: torch.FloatTensor = None
    padding_log_prob: torch.FloatTensor = None
    logdet: torch.FloatTensor = None
    latents: torch.FloatTensor = None


class MotionFlow(nn.Module):
    """Conditional flow over future frames given observed frames.

    Inputs are batch-first ``x`` of shape (B, U, N, D) and ``y`` of shape
    (B, V, N, D). The conditioner runs once per input sequence; its bundle
    is shared by every output frame. Entities past
    ``config.real_entities`` are padding: the likelihood replaces them by
    N(0, 1) noise, subtracts the noise density and counts only real
    dimensions.

    Args:
        config: Model configuration, validated on construction.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        self.conditioner = SpatioTemporalConditioner(config)
        self.flow = ConditionalFlow(config)
        self.prior = build_prior(config)
        self.loss_fn = FlowNLLLoss(config.modelled_dims)

    @classmethod
    def from_config(cls, config: ModelConfig) -> 'MotionFlow':
        """Build a seeded model in the configured precision."""
        torch.manual_seed(config.seed)
        model = cls(config)
        logger.info('built model: %d parameters, K=%d, flags A=%s B=%s C=%s',
                    sum(p.numel() for p in model.parameters()),
                    config.num_flow_steps, config.use_masked_conditioner,
                    config.use_dynamic_prior, config.use_residual_net)
        return model.to(resolve_dtype(config.precision))

    def _check(self, name: str, tensor: torch.Tensor, frames: int) -> None:
        expected = (frames, self.config.num_entities, self.config.feature_dim)
        if tensor.dim() != 4 or tuple(tensor.shape[1:]) != expected:
            raise ShapeError(f'{name} must have shape (B, {expected[0]}, '
                             f'{expected[1]}, {expected[2]}), '
                             f'got {tuple(tensor.shape)}')

    def condition(self, x: torch.Tensor) -> ConditioningBundle:
        self._check('x', x, self.config.input_steps)
        bundle = self.conditioner(rearrange(x, 'b u n d -> b d u n'))
        check_finite('conditioner context u', bundle.u)
        return bundle

    def encode(self,
               y: torch.Tensor,
               bundle: ConditioningBundle) -> LatentSequence:
        """Push every output frame through the flow."""
        self._check('y', y, self.config.output_steps)
        b, v = y.shape[:2]
        frames = rearrange(y, 'b v n d -> (b v) d 1 n')
        z, logdet = self.flow(frames, bundle.repeat_interleave(v))
        return LatentSequence(
            frames=rearrange(z, '(b v) c h w -> b v c h w', b=b),
            logdet=logdet.view(b, v).sum(dim=1))

    def decode(self, latents: torch.Tensor,
               bundle: ConditioningBundle) -> torch.Tensor:
        """Inverse of :meth:`encode`: latents (B, V, C, 1, W) to (B, V, N, D)."""
        b, v = latents.shape[:2]
        frames = self.flow.inverse(
            rearrange(latents, 'b v c h w -> (b v) c h w'),
            bundle.repeat_interleave(v))
        return rearrange(frames, '(b v) d 1 n -> b v n d', b=b)

    def fill_padding(
            self,
            y: torch.Tensor,
            generator: Optional[torch.Generator] = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Replace padded entities of y by N(0, 1) draws.

        Returns:
            The filled frames and the log-density of the draws per sample.
        """
        self._check('y', y, self.config.output_steps)
        real = self.config.real_entities
        if real == self.config.num_entities:
            return y, y.new_zeros(y.size(0))
        noise = torch.randn(y[:, :, real:].shape,
                            generator=generator,
                            dtype=y.dtype,
                            device=y.device)
        return (torch.cat((y[:, :, :real], noise), dim=2),
                gaussian_log_prob(noise, 0.0, 1.0, batch_dims=1))

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> MotionFlowOutput:
        bundle = self.condition(x)
        y, padding_log_prob = self.fill_padding(y)
        latents = self.encode(y, bundle)
        check_finite('latent frames', latents.frames)
        check_finite('flow logdet', latents.logdet)
        log_prob = self.prior.log_prob(latents.frames)
        loss = self.loss_fn(log_prob - padding_log_prob, latents.logdet)
        return MotionFlowOutput(loss=loss,
                                log_prob=log_prob,
                                padding_log_prob=padding_log_prob,
                                logdet=latents.logdet,
                                latents=latents.frames)

    def nll(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Batch-mean negative log-likelihood in nats per dimension."""
        return self(x, y).loss

    def rollout(self,
                bundle: ConditioningBundle,
                temperature: float = 0.0,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Generate V frames autoregressively from the prior.

        Each sampled latent becomes the newest prior context, then the flow
        inverse maps it to a frame.
        """
        h_prev2, h_prev1 = self.prior.initial_context(bundle.batch_size)
        frames = []
        for _ in range(self.config.output_steps):
            mu, log_sigma = self.prior.prior_params(h_prev2, h_prev1)
            z = sample_latent(mu, log_sigma.exp(), temperature, generator)
            frames.append(self.flow.inverse(z, bundle))
            h_prev2, h_prev1 = h_prev1, z
        return rearrange(torch.stack(frames, dim=1), 'b v d 1 n -> b v n d')

    @torch.no_grad()
    def predict(self,
                x: torch.Tensor,
                mode: str = 'mean',
                temperature: float = 0.7,
                num_samples: int = 10,
                seed: int = 0) -> torch.Tensor:
        """Forecast y of shape (B, V, N, D) from x.

        Args:
            x: Observed frames (B, U, N, D).
            mode: ``mean`` follows the prior means, ``sample`` draws one
                path at ``temperature``, ``average`` averages
                ``num_samples`` paths drawn with seeds ``seed + i``.
            temperature: Noise scale for ``sample`` and ``average``.
            num_samples: Paths averaged in ``average`` mode.
            seed: Seed of the first sampled path.
        """
        if mode not in PREDICT_MODES:
            raise ValueError(f'mode must be one of {PREDICT_MODES}, got {mode!r}')
        if num_samples < 1:
            raise ValueError(f'num_samples must be >= 1, got {num_samples}')
        bundle = self.condition(x)
        if mode == 'mean' or temperature == 0:
            return self.rollout(bundle)
        if mode == 'sample':
            return self.rollout(bundle, temperature,
                                torch.Generator().manual_seed(seed))
        paths = [
            self.rollout(bundle, temperature,
                         torch.Generator().manual_seed(seed + i))
            for i in range(num_samples)
        ]
        return torch.stack(paths).mean(dim=0)
