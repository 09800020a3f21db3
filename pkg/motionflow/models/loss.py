from typing import Optional

import torch
import torch.nn as nn

from ..utils.modeling import check_finite


class FlowNLLLoss(nn.Module):
    """Negative log-likelihood in nats per dimension.

    Args:
        num_dims: Modelled values per sample, padded entities excluded
            (V * D * real entities).
    """
    def __init__(self, num_dims: int) -> None:
        super().__init__()
        self.num_dims = num_dims

    def forward(self, log_prob: torch.Tensor,
                logdet: torch.Tensor) -> torch.Tensor:
        check_finite('log_prob', log_prob)
        check_finite('logdet', logdet)
        nll = -(log_prob + logdet) / self.num_dims
        return check_finite('nll', nll.mean())


class SquaredErrorLoss(nn.Module):
    """Mean squared error over entities, optionally restricted by a mask.

    The mask marks real (non-padding) entities on the entity axis.
    """
    def forward(self,
                prediction: torch.Tensor,
                target: torch.Tensor,
                entity_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            prediction: Tensor of shape (..., N, D).
            target: Same shape as ``prediction``.
            entity_mask: Boolean tensor of shape (N,).
        """
        error = (prediction - target)**2
        if entity_mask is None:
            return error.mean()
        mask = entity_mask.to(error.dtype)[:, None].expand_as(error)
        return (error * mask).sum() / mask.sum()
