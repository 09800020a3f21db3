"""Forecast scoring, the constant-velocity baseline and the ablation grid."""
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from ..dataset.data_utils import (NormalizationStats, TrajectoryDataset,
                                  entity_mask, normalize_stats)
from ..dataset.simulator import SimConfig, generate_dataset
from ..models.loss import SquaredErrorLoss
from ..models.motionflow import MotionFlow
from ..utils.errors import ConfigError, DataError
from ..utils.utils import resolve_dtype
from .config import ModelConfig
from .trainer import MotionFlowTrainer, TrainResult

logger = logging.getLogger(__name__)

# Label -> (use_masked_conditioner, use_dynamic_prior, use_residual_net)
ABLATIONS = {
    '-A': (False, False, False),
    'A': (True, False, False),
    'AB': (True, True, False),
    'ABC': (True, True, True),
}

Forecaster = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class MSEReport:
    """Mean squared error per predicted step.

    Attributes:
        normalized: Horizon -> MSE in the model's normalized coordinates.
        denormalized: Horizon -> MSE in the original coordinates; equal to
            ``normalized`` when no statistics were given.
        num_samples: Number of scored sequences.
    """
    normalized: Dict[int, float] = field(default_factory=dict)
    denormalized: Dict[int, float] = field(default_factory=dict)
    num_samples: int = 0

    def to_dict(self):
        return {
            'normalized': {str(h): v for h, v in self.normalized.items()},
            'denormalized': {str(h): v for h, v in self.denormalized.items()},
            'num_samples': self.num_samples,
        }


def constant_velocity_forecast(x: torch.Tensor,
                               output_steps: int) -> torch.Tensor:
    """Extrapolate the last observed displacement.

    Args:
        x: Observed frames (B, U, N, D).
        output_steps: Frames to forecast.

    Returns:
        Tensor of shape (B, V, N, D); with a single observed frame the last
        frame is repeated.
    """
    last = x[:, -1:]
    if x.shape[1] < 2:
        return last.expand(-1, output_steps, -1, -1).clone()
    velocity = last - x[:, -2:-1]
    steps = torch.arange(1,
                         output_steps + 1,
                         dtype=x.dtype,
                         device=x.device).view(1, -1, 1, 1)
    return last + steps * velocity


def horizon_mse(prediction: torch.Tensor,
                target: torch.Tensor,
                horizons: Sequence[int],
                mask: Optional[torch.Tensor] = None,
                dims: Sequence[int] = ()) -> Dict[int, float]:
    """MSE at each 1-based horizon over (B, V, N, D) tensors."""
    if prediction.shape != target.shape:
        raise DataError(f'prediction {tuple(prediction.shape)} and target '
                        f'{tuple(target.shape)} differ in shape')
    if dims:
        index = torch.as_tensor(list(dims), device=prediction.device)
        prediction = prediction.index_select(-1, index)
        target = target.index_select(-1, index)
    loss = SquaredErrorLoss()
    return {
        h: loss(prediction[:, h - 1], target[:, h - 1], mask).item()
        for h in horizons
    }


def _check_horizons(horizons: Sequence[int], output_steps: int) -> None:
    if not horizons:
        raise ConfigError('at least one horizon is needed')
    bad = [h for h in horizons if not 1 <= h <= output_steps]
    if bad:
        raise ConfigError(f'horizons {bad} are outside [1, {output_steps}]')


@torch.no_grad()
def evaluate_forecaster(forecast: Forecaster,
                        dataset: Dataset,
                        horizons: Sequence[int],
                        stats: Optional[NormalizationStats] = None,
                        num_entities: Optional[int] = None,
                        position_dims: Sequence[int] = (),
                        batch_size: int = 64) -> MSEReport:
    """Score any ``x -> y_hat`` forecaster on a dataset of (x, y) windows.

    Padding entities beyond ``num_entities`` are excluded; ``position_dims``
    restricts the score to those features (all features when empty).
    """
    if len(dataset) == 0:
        raise DataError('cannot evaluate an empty dataset')
    predictions, targets = [], []
    for x, y in DataLoader(dataset, batch_size=batch_size, shuffle=False):
        predictions.append(forecast(x))
        targets.append(y)
    prediction = torch.cat(predictions)
    target = torch.cat(targets)
    _check_horizons(horizons, target.shape[1])

    num_padded = target.shape[2]
    mask = entity_mask(num_entities or num_padded, num_padded)
    report = MSEReport(num_samples=len(target))
    report.normalized = horizon_mse(prediction, target, horizons, mask,
                                    position_dims)
    if stats is not None:
        report.denormalized = horizon_mse(stats.denormalize(prediction),
                                          stats.denormalize(target), horizons,
                                          mask, position_dims)
    else:
        report.denormalized = dict(report.normalized)
    return report


def evaluate_mse(model: MotionFlow,
                 dataset: Dataset,
                 horizons: Sequence[int],
                 stats: Optional[NormalizationStats] = None,
                 num_entities: Optional[int] = None,
                 position_dims: Sequence[int] = (),
                 mode: str = 'mean',
                 temperature: float = 0.7,
                 num_samples: int = 10,
                 seed: int = 0) -> MSEReport:
    """Forecast every window with ``model.predict`` and score the horizons."""
    _check_horizons(horizons, model.config.output_steps)
    model.eval()

    def forecast(x: torch.Tensor) -> torch.Tensor:
        return model.predict(x,
                             mode=mode,
                             temperature=temperature,
                             num_samples=num_samples,
                             seed=seed)

    report = evaluate_forecaster(forecast, dataset, horizons, stats,
                                 num_entities, position_dims,
                                 model.config.batch_size)
    logger.info('MSE (%s mode) %s', mode, ', '.join(
        f'step {h}: {v:.4e}' for h, v in report.denormalized.items()))
    return report


def evaluate_baseline(dataset: Dataset,
                      horizons: Sequence[int],
                      output_steps: int,
                      stats: Optional[NormalizationStats] = None,
                      num_entities: Optional[int] = None,
                      position_dims: Sequence[int] = ()) -> MSEReport:
    """Score :func:`constant_velocity_forecast` like :func:`evaluate_mse`."""
    return evaluate_forecaster(
        lambda x: constant_velocity_forecast(x, output_steps), dataset,
        horizons, stats, num_entities, position_dims)


def median_sample_mse(model: MotionFlow,
                      dataset: Dataset,
                      horizons: Sequence[int],
                      stats: Optional[NormalizationStats] = None,
                      num_entities: Optional[int] = None,
                      position_dims: Sequence[int] = (),
                      temperature: float = 0.7,
                      num_samples: int = 10,
                      seed: int = 0) -> MSEReport:
    """Per-horizon median MSE over ``num_samples`` single sampled paths.

    Path ``i`` is drawn with seed ``seed + i``, i.e. the paths that
    ``average`` mode averages for the same arguments.
    """
    if num_samples < 1:
        raise ConfigError(f'num_samples must be >= 1, got {num_samples}')
    reports = [
        evaluate_mse(model,
                     dataset,
                     horizons,
                     stats,
                     num_entities,
                     position_dims,
                     mode='sample',
                     temperature=temperature,
                     seed=seed + i) for i in range(num_samples)
    ]

    def median(key: str) -> Dict[int, float]:
        return {
            h: float(np.median([getattr(r, key)[h] for r in reports]))
            for h in horizons
        }

    return MSEReport(normalized=median('normalized'),
                     denormalized=median('denormalized'),
                     num_samples=reports[0].num_samples)


def averaging_gain(average: MSEReport, median: MSEReport) -> Dict[int, bool]:
    """Horizon -> whether the averaged forecast scores at most the median
    single-sample forecast (normalized coordinates)."""
    return {
        h: average.normalized[h] <= median.normalized[h]
        for h in average.normalized
    }


def ablation_datasets(config: ModelConfig,
                      num_train: int = 32,
                      num_val: int = 8,
                      seed: int = 0) -> Tuple[TrajectoryDataset,
                                              TrajectoryDataset]:
    """Small particle datasets matching ``config``'s geometry.

    One particle per entity is simulated; the first ``feature_dim`` of its
    (x, y, vx, vy) features are kept.
    """
    if config.feature_dim > 4:
        raise ConfigError('ablation data carries at most 4 features per entity')
    sim = SimConfig(num_particles=config.num_entities,
                    num_frames=config.input_steps + config.output_steps,
                    input_frames=config.input_steps,
                    seed=seed)
    splits, _ = generate_dataset(sim, num_train, num_val, 1)
    features = {
        name: split[..., :config.feature_dim]
        for name, split in splits.items()
    }
    stats = normalize_stats(features['train'])
    dtype = resolve_dtype(config.precision)
    train, val = (TrajectoryDataset(stats.normalize(features[name]),
                                    config.input_steps,
                                    config.output_steps,
                                    dtype=dtype) for name in ('train', 'val'))
    return train, val


def run_ablation_grid(config: Optional[ModelConfig] = None,
                      epochs: int = 5,
                      work_dirs: str = 'work_dirs/ablation',
                      num_train: int = 32,
                      num_val: int = 8,
                      progress: bool = False) -> Dict[str, TrainResult]:
    """Train every component combination of :data:`ABLATIONS`.

    Every variant shares the data and the seed; the returned results are
    keyed by label (``-A``, ``A``, ``AB``, ``ABC``).
    """
    config = config or ModelConfig.tiny()
    train_set, val_set = ablation_datasets(config, num_train, num_val,
                                           config.seed)
    results = {}
    for label, (a, b, c) in ABLATIONS.items():
        variant = dataclasses.replace(config,
                                      use_masked_conditioner=a,
                                      use_dynamic_prior=b,
                                      use_residual_net=c,
                                      max_epochs=epochs,
                                      patience=epochs)
        model = MotionFlow.from_config(variant)
        trainer = MotionFlowTrainer(model,
                                    train_set,
                                    val_set,
                                    work_dirs=os.path.join(work_dirs, label),
                                    progress=progress)
        results[label] = trainer.train()
        logger.info('ablation %-3s: best val nll %.6f', label,
                    results[label].best_val_nll)
    return results


def ablation_table(results: Dict[str, TrainResult]) -> str:
    """Plain-text table of the final and best validation NLL per variant."""
    lines = [f'{"variant":<8}{"final val nll":>16}{"best val nll":>16}']
    for label, result in results.items():
        lines.append(f'{label:<8}{final_val_nll(result):>16.6f}'
                     f'{result.best_val_nll:>16.6f}')
    return '\n'.join(lines)


def final_val_nll(result: TrainResult) -> float:
    return result.history[-1]['val_nll'] if result.history else np.nan


def ablation_ordering(results: Dict[str, TrainResult]) -> Dict[str, bool]:
    """Ablation label -> whether the full ``ABC`` model ends with a final
    validation NLL at most that of the ablation."""
    if 'ABC' not in results:
        raise ConfigError('ablation ordering needs the full ABC variant')
    full = final_val_nll(results['ABC'])
    return {
        label: bool(full <= final_val_nll(result))
        for label, result in results.items() if label != 'ABC'
    }
