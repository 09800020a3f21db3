"""Normalization, entity padding, dataset files and torch datasets."""
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
from torch.utils.data import Dataset

from ..utils.errors import DataError
from ..utils.utils import WindowSampler

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
PARTICLE_COLUMNS = ('sample', 'frame', 'particle', 'x', 'y', 'vx', 'vy')
SCALE_FLOOR = 1e-8
ENTITY_MULTIPLE = 4

Array = Union[np.ndarray, torch.Tensor]


@dataclass
class NormalizationStats:
    """Per-feature max-absolute scales; normalized values lie in [-1, 1]."""
    scale: np.ndarray

    def _scale_like(self, values: Array) -> Array:
        if isinstance(values, torch.Tensor):
            return torch.as_tensor(self.scale,
                                   dtype=values.dtype,
                                   device=values.device)
        return self.scale

    def normalize(self, values: Array) -> Array:
        return values / self._scale_like(values)

    def denormalize(self, values: Array) -> Array:
        return values * self._scale_like(values)

    def to_dict(self) -> Dict[str, Any]:
        return {'scale': [float(s) for s in self.scale]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'NormalizationStats':
        try:
            return cls(np.asarray(data['scale'], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f'malformed normalization record: {exc}') from exc


def normalize_stats(data: np.ndarray,
                    floor: float = SCALE_FLOOR) -> NormalizationStats:
    """``max(|value|, floor)`` per feature over every other axis."""
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise DataError('cannot compute normalization statistics of an '
                        'empty split')
    flat = data.reshape(-1, data.shape[-1])
    return NormalizationStats(np.maximum(np.abs(flat).max(axis=0), floor))


def pad_entities(values: np.ndarray,
                 multiple: int = ENTITY_MULTIPLE) -> Tuple[np.ndarray, int]:
    """Zero-pad the entity axis (second to last) up to a multiple.

    Returns:
        The padded array and the number of real entities.
    """
    num_real = values.shape[-2]
    missing = -num_real % multiple
    if missing == 0:
        return values, num_real
    pad = [(0, 0)] * values.ndim
    pad[-2] = (0, missing)
    return np.pad(values, pad), num_real


def entity_mask(num_real: int, num_padded: int) -> torch.Tensor:
    """Boolean mask over the padded entity axis, True for real entities."""
    mask = torch.zeros(num_padded, dtype=torch.bool)
    mask[:num_real] = True
    return mask


def prepare_sequences(raw: np.ndarray,
                      stats: NormalizationStats,
                      multiple: int = ENTITY_MULTIPLE) -> Tuple[np.ndarray, int]:
    """Normalize (S, L, N, D) sequences and pad their entity axis."""
    return pad_entities(stats.normalize(np.asarray(raw, dtype=np.float64)),
                        multiple)


def write_particle_dataset(out_dir: str,
                           splits: Dict[str, np.ndarray],
                           stats: NormalizationStats,
                           extra: Optional[Dict[str, Any]] = None) -> None:
    """Write ``manifest.json`` plus one CSV per split.

    CSV rows are ordered by sample, frame, particle with columns
    ``sample,frame,particle,x,y,vx,vy``.
    """
    os.makedirs(out_dir, exist_ok=True)
    first = next(iter(splits.values()))
    manifest = {
        'format': 'motionflow-particles',
        'version': 1,
        'columns': list(PARTICLE_COLUMNS),
        'counts': {name: int(arr.shape[0])
                   for name, arr in splits.items()},
        'geometry': {
            'frames': int(first.shape[1]),
            'particles': int(first.shape[2]),
            'features': int(first.shape[3]),
        },
        'normalization': stats.to_dict(),
    }
    manifest.update(extra or {})
    for name, arr in splits.items():
        index = pd.MultiIndex.from_product(
            [range(n) for n in arr.shape[:3]], names=list(PARTICLE_COLUMNS[:3]))
        table = pd.DataFrame(arr.reshape(-1, arr.shape[-1]),
                             index=index,
                             columns=list(PARTICLE_COLUMNS[3:]))
        table.to_csv(os.path.join(out_dir, f'{name}.csv'),
                     float_format='%.17g')
        logger.debug('wrote %s split: %d rows', name, len(table))
    with open(os.path.join(out_dir, MANIFEST), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def read_manifest(dataset_dir: str) -> Dict[str, Any]:
    path = os.path.join(dataset_dir, MANIFEST)
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except OSError as exc:
        raise DataError(f'cannot read dataset manifest {path}: {exc}') from exc
    except json.JSONDecodeError as exc:
        raise DataError(f'{path}: invalid JSON at line {exc.lineno}, '
                        f'column {exc.colno}') from exc


def read_particle_dataset(
    dataset_dir: str
) -> Tuple[Dict[str, np.ndarray], NormalizationStats, Dict[str, Any]]:
    """Load what :func:`write_particle_dataset` wrote.

    Returns:
        Raw split arrays (S, T, N, D), the stored statistics and the manifest.
    """
    manifest = read_manifest(dataset_dir)
    try:
        counts = manifest['counts']
        geometry = manifest['geometry']
        frames, particles = geometry['frames'], geometry['particles']
        features = geometry['features']
    except KeyError as exc:
        raise DataError(f'manifest in {dataset_dir} lacks {exc}') from exc
    splits = {}
    for name, count in counts.items():
        path = os.path.join(dataset_dir, f'{name}.csv')
        try:
            table = pd.read_csv(path)
            header = [str(c) for c in table.columns]
            rows = table.to_numpy(dtype=np.float64)
        except (OSError, ValueError) as exc:
            raise DataError(f'cannot read {path}: {exc}') from exc
        if header != list(PARTICLE_COLUMNS):
            raise DataError(f'{path}: header {header} does not match '
                            f'{list(PARTICLE_COLUMNS)}')
        shape = (count, frames, particles)
        if rows.shape != (int(np.prod(shape)), 3 + features):
            raise DataError(f'{path}: expected {int(np.prod(shape))} rows of '
                            f'{3 + features} columns, got {rows.shape}')
        expected = np.indices(shape).reshape(3, -1).T
        bad = np.nonzero((rows[:, :3] != expected).any(axis=1))[0]
        if bad.size:
            raise DataError(f'{path}: row {int(bad[0]) + 2} is out of '
                            f'sample/frame/particle order')
        splits[name] = rows[:, 3:].reshape(*shape, features)
    stats = NormalizationStats.from_dict(manifest.get('normalization', {}))
    return splits, stats, manifest


class TrajectoryDataset(Dataset):
    """Normalized, entity-padded sequences served as ``(x, y)`` windows.

    Args:
        sequences: Array of shape (S, L, N, D) with L >= U + V.
        input_steps: U.
        output_steps: V.
        random_crop: Start each window at a random frame of its sequence
            instead of frame 0.
        seed: Seed of the crop sampler.
        dtype: Tensor dtype of the served windows.
    """
    def __init__(self,
                 sequences: np.ndarray,
                 input_steps: int,
                 output_steps: int,
                 random_crop: bool = False,
                 seed: Optional[int] = None,
                 dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        if sequences.ndim != 4 or len(sequences) == 0:
            raise DataError(f'expected a non-empty (S, L, N, D) array, got '
                            f'shape {sequences.shape}')
        length = sequences.shape[1]
        self.input_steps = input_steps
        self.window = input_steps + output_steps
        if length < self.window:
            raise DataError(f'sequences of {length} frames are shorter than '
                            f'a window of {self.window}')
        self.data = torch.as_tensor(sequences, dtype=dtype)
        self.sampler = WindowSampler(length, self.window,
                                     seed) if random_crop else None

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, idx) -> Tuple[torch.Tensor, torch.Tensor]:
        start = self.sampler() if self.sampler is not None else 0
        window = self.data[idx, start:start + self.window]
        return window[:self.input_steps], window[self.input_steps:]
