from dataclasses import dataclass, replace
from typing import List

import torch
from torchtyping import TensorType


@dataclass
class StepConditioning:
    """Conditional parameters of one flow step.

    :param log_scale: Actnorm log-scale, ``s = exp(log_scale)``.
    :type log_scale: torch.Tensor

    :param bias: Actnorm bias.
    :type bias: torch.Tensor

    :param lower: Strictly lower-triangular factor of the mixing matrix.
    :type lower: torch.Tensor

    :param upper: Strictly upper-triangular factor of the mixing matrix.
    :type upper: torch.Tensor

    :param log_diag: Log of the mixing matrix diagonal, so
        ``W = (I + lower) @ (upper + diag(exp(log_diag)))``.
    :type log_diag: torch.Tensor

    :param context: Coupling context map concatenated to the passive half.
    :type context: torch.Tensor
    """

    log_scale: TensorType['batch', 'channels']
    bias: TensorType['batch', 'channels']
    lower: TensorType['batch', 'channels', 'channels']
    upper: TensorType['batch', 'channels', 'channels']
    log_diag: TensorType['batch', 'channels']
    context: TensorType['batch', 'context_channels', 1, 'width']

    def repeat_interleave(self, repeats: int) -> 'StepConditioning':
        return StepConditioning(
            **{
                name: value.repeat_interleave(repeats, dim=0)
                for name, value in self.__dict__.items()
            })

    def to(self, dtype: torch.dtype) -> 'StepConditioning':
        return StepConditioning(
            **{name: value.to(dtype)
               for name, value in self.__dict__.items()})


@dataclass
class ConditioningBundle:
    """Everything the flow needs from the input sequence x.

    Computed once per input sequence and shared by every output frame.

    :param u: Fused context map of the conditioner.
    :type u: torch.Tensor

    :param steps: One :class:`StepConditioning` per flow step.
    :type steps: List[StepConditioning]
    """

    u: TensorType['batch', 'x_channels', 'time', 'entities']
    steps: List[StepConditioning]

    @property
    def batch_size(self) -> int:
        return self.u.size(0)

    def repeat_interleave(self, repeats: int) -> 'ConditioningBundle':
        """Repeat every sample ``repeats`` times, e.g. once per output frame."""
        return replace(self,
                       u=self.u.repeat_interleave(repeats, dim=0),
                       steps=[
                           step.repeat_interleave(repeats)
                           for step in self.steps
                       ])


@dataclass
class LatentSequence:
    """Per-frame latents of an output sequence.

    :param frames: Latent frames h_1..h_V stacked on axis 1.
    :type frames: torch.Tensor

    :param logdet: Flow log-determinant summed over all frames, per sample.
    :type logdet: torch.Tensor
    """

    frames: TensorType['batch', 'frames', 'channels', 1, 'width']
    logdet: TensorType['batch']

    @property
    def num_frames(self) -> int:
        return self.frames.size(1)
