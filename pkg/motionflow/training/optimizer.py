from typing import Iterable

import torch
from torch.nn.utils import clip_grad_norm_
from torch.optim import AdamW

from .config import ModelConfig


def build_optimizer(params: Iterable[torch.nn.Parameter],
                    config: ModelConfig) -> AdamW:
    """Adam with decoupled weight decay.

    Each step first shrinks every weight by ``1 - lr * weight_decay`` and
    then applies the bias-corrected Adam update.
    """
    return AdamW(params,
                 lr=config.learning_rate,
                 betas=(config.beta1, config.beta2),
                 eps=config.adam_eps,
                 weight_decay=config.weight_decay)


def grad_norm(params: Iterable[torch.nn.Parameter]) -> float:
    grads = [p.grad.detach().norm() for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.stack(grads).norm())


def adam_step(optimizer: torch.optim.Optimizer,
              params: Iterable[torch.nn.Parameter],
              max_grad_norm: float = 0.0) -> float:
    """Clip the accumulated gradients, apply one update and clear them.

    Args:
        optimizer: Optimizer owning ``params``.
        params: Parameters whose ``.grad`` holds the current gradient.
        max_grad_norm: Clipping threshold on the global gradient norm;
            ``0`` disables clipping.

    Returns:
        The global gradient norm before clipping.
    """
    params = list(params)
    if max_grad_norm > 0:
        norm = float(clip_grad_norm_(params, max_grad_norm))
    else:
        norm = grad_norm(params)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return norm
