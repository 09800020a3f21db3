import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from ..dataset.data_utils import (NormalizationStats, TrajectoryDataset,
                                  normalize_stats, prepare_sequences,
                                  read_particle_dataset)
from ..dataset.series_dataset import (chronological_splits, load_csv_series,
                                      stack_windows, window_sequences)
from ..models.motionflow import MotionFlow
from ..utils.errors import ConfigError, NonFiniteError
from ..utils.utils import resolve_dtype, seed_everything
from .checkpoint import Checkpoint, save_checkpoint
from .config import ModelConfig, RunConfig
from .optimizer import adam_step, build_optimizer

logger = logging.getLogger(__name__)


@dataclass
class RunData:
    """Datasets of a run plus what evaluation needs to undo preprocessing.

    Attributes:
        datasets: ``train``, ``val`` and ``test`` datasets.
        stats: Normalization scales of the training split.
        num_entities: Real entities; the rest of the entity axis is padding.
        position_dims: Feature indices scored by the MSE evaluation.
    """
    datasets: Dict[str, TrajectoryDataset]
    stats: NormalizationStats
    num_entities: int
    position_dims: Tuple[int, ...]


def _check_geometry(model: ModelConfig, sequences: np.ndarray,
                    source: str) -> None:
    _, length, entities, features = sequences.shape
    if (entities, features) != (model.num_entities, model.feature_dim):
        raise ConfigError(
            f'{source} has {entities} (padded) entities x {features} features '
            f'but the model expects {model.num_entities} x '
            f'{model.feature_dim}; set model.num_entities/feature_dim')
    if length < model.input_steps + model.output_steps:
        raise ConfigError(f'{source} sequences have {length} frames, fewer '
                          f'than input_steps + output_steps')


def load_run_data(config: RunConfig) -> RunData:
    """Build normalized, entity-padded datasets for a run.

    Reads a simulated particle dataset, or a CSV series when
    ``data.csv_path`` is set. CSV series are split along time and cut into
    U + V frame windows at ``data.stride``; with ``data.random_crop`` the
    training windows are ``data.crop_length`` frames long and each sample
    starts at a random frame inside its window.
    """
    model, data = config.model, config.data
    dtype = resolve_dtype(model.precision)
    window = model.input_steps + model.output_steps
    if data.csv_path is None:
        splits, stats, _ = read_particle_dataset(data.dataset_dir)
        datasets = {}
        num_entities = None
        for name, raw in splits.items():
            sequences, num_entities = prepare_sequences(raw, stats)
            _check_geometry(model, sequences, data.dataset_dir)
            datasets[name] = TrajectoryDataset(sequences,
                                               model.input_steps,
                                               model.output_steps,
                                               dtype=dtype)
        return RunData(datasets, stats, num_entities, tuple(data.position_dims))

    series = load_csv_series(data.csv_path, data.features_per_entity)
    segments = chronological_splits(series.values, data.train_fraction,
                                    data.val_fraction)
    stats = normalize_stats(series.grouped(segments['train']))
    datasets = {}
    num_entities = series.num_entities
    for name, segment in segments.items():
        padded, _ = prepare_sequences(series.grouped(segment)[None], stats)
        crop = data.random_crop and name == 'train' and data.crop_length > window
        length = data.crop_length if crop else window
        if len(segment) < length:
            raise ConfigError(f'{name} segment of {data.csv_path} has '
                              f'{len(segment)} steps, fewer than {length}')
        windows = stack_windows(
            window_sequences(padded[0], length - model.output_steps,
                             model.output_steps, data.stride))
        _check_geometry(model, windows, data.csv_path)
        datasets[name] = TrajectoryDataset(windows,
                                           model.input_steps,
                                           model.output_steps,
                                           random_crop=crop,
                                           seed=model.seed,
                                           dtype=dtype)
    return RunData(datasets, stats, num_entities, ())


class EarlyStopping:
    """Stop once ``patience`` epochs in a row failed to beat the best value."""
    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epochs_since_best = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record one epoch; return True if it is the new best."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best > self.patience


@dataclass
class TrainResult:
    """Summary of :meth:`MotionFlowTrainer.train`.

    Attributes:
        initial_val_nll: Validation NLL before the first update.
        best_val_nll: Lowest validation NLL reached.
        best_epoch: Epoch of ``best_val_nll``.
        epochs: Epochs run.
        history: One metrics record per epoch.
    """
    initial_val_nll: float
    best_val_nll: float
    best_epoch: int
    epochs: int
    history: List[Dict[str, float]] = field(default_factory=list)


class MotionFlowTrainer():
    """Maximum-likelihood training with early stopping.

    Each epoch shuffles the training set with a seeded generator, applies
    one AdamW update per batch and scores the validation set. The best and
    the latest checkpoint are kept in ``<work_dirs>/checkpoints`` and one
    JSON line per epoch is appended to ``<work_dirs>/metrics.jsonl``.
    """
    def __init__(self,
                 model: MotionFlow,
                 train_dataset: Dataset,
                 val_dataset: Dataset,
                 work_dirs: str = 'work_dirs',
                 normalization: Optional[NormalizationStats] = None,
                 num_entities: Optional[int] = None,
                 progress: bool = True):
        self.model = model
        self.config = model.config
        self.optimizer = build_optimizer(model.parameters(), self.config)
        self.generator = seed_everything(self.config.seed)
        self.train_dataloader = DataLoader(train_dataset,
                                           batch_size=self.config.batch_size,
                                           shuffle=True,
                                           generator=self.generator)
        self.val_dataloader = DataLoader(val_dataset,
                                         batch_size=self.config.batch_size,
                                         shuffle=False)
        self.work_dirs = work_dirs
        self.model_folder = os.path.join(work_dirs, 'checkpoints')
        self.metrics_path = os.path.join(work_dirs, 'metrics.jsonl')
        self.normalization = normalization
        self.num_entities = num_entities
        self.progress = progress
        self.history: List[Dict[str, float]] = []
        self.epoch = 0

    def train_step(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[float, float]:
        """One update on a batch; returns (nll, gradient norm)."""
        self.model.train()
        loss = self.model(x, y).loss
        loss.backward()
        norm = adam_step(self.optimizer, self.model.parameters(),
                         self.config.max_grad_norm)
        return loss.item(), norm

    @torch.no_grad()
    def evaluate_nll(self, dataloader: DataLoader) -> float:
        """Sample-weighted mean NLL over a dataloader."""
        self.model.eval()
        total, count = 0.0, 0
        for x, y in dataloader:
            total += self.model(x, y).loss.item() * len(x)
            count += len(x)
        if count == 0:
            raise ConfigError('cannot evaluate an empty dataset')
        return total / count

    def save_checkpoint(self, name: str) -> str:
        path = os.path.join(self.model_folder, f'{name}.ckpt')
        save_checkpoint(
            path,
            Checkpoint(config=self.config,
                       model_state=self.model.state_dict(),
                       optimizer_state=self.optimizer.state_dict(),
                       epoch=self.epoch,
                       history=list(self.history),
                       normalization=self.normalization,
                       num_entities=self.num_entities))
        return path

    def _log_metrics(self, record: Dict[str, float]) -> None:
        with open(self.metrics_path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record, sort_keys=True) + '\n')

    def train(self, max_epochs: Optional[int] = None) -> TrainResult:
        max_epochs = max_epochs or self.config.max_epochs
        os.makedirs(self.model_folder, exist_ok=True)
        if os.path.exists(self.metrics_path):
            os.remove(self.metrics_path)

        initial = self.evaluate_nll(self.val_dataloader)
        logger.info('Start training: initial val nll %.6f', initial)
        self.save_checkpoint('last')
        stopper = EarlyStopping(self.config.patience)

        for epoch in range(1, max_epochs + 1):
            total, count, norms = 0.0, 0, []
            batches = tqdm(self.train_dataloader,
                           desc=f'epoch {epoch}',
                           leave=False,
                           disable=not self.progress)
            try:
                for x, y in batches:
                    loss, norm = self.train_step(x, y)
                    total += loss * len(x)
                    count += len(x)
                    norms.append(norm)
                    batches.set_postfix(nll=f'{loss:.4f}')
                val_nll = self.evaluate_nll(self.val_dataloader)
            except NonFiniteError:
                logger.error(
                    'non-finite values in epoch %d; last good checkpoint '
                    'kept at %s', epoch,
                    os.path.join(self.model_folder, 'last.ckpt'))
                raise

            self.epoch = epoch
            improved = stopper.update(val_nll, epoch)
            record = {
                'epoch': epoch,
                'train_nll': total / max(count, 1),
                'val_nll': val_nll,
                'best_val_nll': stopper.best,
                'grad_norm': float(np.mean(norms)) if norms else 0.0,
            }
            self.history.append(record)
            self._log_metrics(record)
            logger.info('Epoch: %d | train nll: %.6f | val nll: %.6f%s', epoch,
                        record['train_nll'], val_nll,
                        ' (best)' if improved else '')
            if improved:
                self.save_checkpoint('best')
            self.save_checkpoint('last')
            if stopper.should_stop:
                logger.info('Early stop after %d epochs without improvement',
                            stopper.epochs_since_best)
                break

        logger.info('Finished training: best val nll %.6f at epoch %d',
                    stopper.best, stopper.best_epoch)
        return TrainResult(initial_val_nll=initial,
                           best_val_nll=stopper.best,
                           best_epoch=stopper.best_epoch,
                           epochs=self.epoch,
                           history=list(self.history))


def train(config: RunConfig,
          data: Optional[RunData] = None) -> Tuple[MotionFlow, TrainResult]:
    """Build a model for ``config`` and train it on the run's data.

    The model learns which entities are padding from the data unless
    ``model.num_real_entities`` is set, in which case the two must agree.
    """
    data = data or load_run_data(config)
    model_config = config.model
    if model_config.num_real_entities is None:
        model_config = dataclasses.replace(
            model_config, num_real_entities=data.num_entities)
    elif model_config.num_real_entities != data.num_entities:
        raise ConfigError(
            f'model.num_real_entities={model_config.num_real_entities} but '
            f'the data holds {data.num_entities} real entities')
    model = MotionFlow.from_config(model_config)
    trainer = MotionFlowTrainer(model,
                                data.datasets['train'],
                                data.datasets['val'],
                                work_dirs=config.output_dir,
                                normalization=data.stats,
                                num_entities=data.num_entities,
                                progress=config.progress)
    return model, trainer.train()
