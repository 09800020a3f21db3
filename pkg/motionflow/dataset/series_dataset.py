"""Generic multivariate series from CSV, cut into sliding windows."""
import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class SeriesDataset:
    """A (T, M) series whose columns are grouped into entities.

    :param values: Array of shape (T_total, M); rows are time steps.
    :type values: np.ndarray

    :param columns: Header names, one per column.
    :type columns: List[str]

    :param features_per_entity: Consecutive columns forming one entity (D).
    :type features_per_entity: int
    """

    values: np.ndarray
    columns: List[str]
    features_per_entity: int = 1

    def __post_init__(self):
        if self.values.shape[1] % self.features_per_entity != 0:
            raise DataError(f'{self.values.shape[1]} columns cannot be grouped '
                            f'into entities of {self.features_per_entity} '
                            f'features')

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_entities(self) -> int:
        """Real entities, padding excluded."""
        return self.values.shape[1] // self.features_per_entity

    def grouped(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        """``values`` (default: the whole series) as (T, N, D)."""
        values = self.values if values is None else values
        return values.reshape(len(values), self.num_entities,
                              self.features_per_entity)


def load_csv_series(path: str, features_per_entity: int = 1) -> SeriesDataset:
    """Parse a numeric CSV with one header row.

    Raises:
        DataError: On ragged rows, empty or non-numeric cells, naming the
            1-based file row and column, or when the file holds no data rows.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as exc:
        raise DataError(f'cannot read {path}: {exc}') from exc
    except pd.errors.EmptyDataError:
        raise DataError(f'{path}: file is empty') from None
    except pd.errors.ParserError as exc:
        line = re.search(r'line (\d+)', str(exc))
        where = f'row {line.group(1)}' if line else 'a row'
        raise DataError(f'{path}: {where} has more cells than the '
                        f'header') from None
    if frame.empty:
        raise DataError(f'{path}: header only, no data rows')

    header = [str(name).strip() for name in frame.columns]
    frame = frame.apply(lambda column: column.str.strip())
    values = frame.apply(pd.to_numeric, errors='coerce').to_numpy(
        dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        i, j = (int(k) for k in bad[0])
        cell = frame.iat[i, j]
        problem = ('missing value' if pd.isna(cell) or not str(cell).strip()
                   else f'{cell!r} is not a finite number')
        raise DataError(f'{path}: row {i + 2}, column {j + 1} '
                        f'({header[j]}): {problem}')
    logger.info('loaded %s: %d steps x %d columns', path, *values.shape)
    return SeriesDataset(values, header, features_per_entity)


def write_csv_series(path: str, values: np.ndarray,
                     columns: Sequence[str]) -> None:
    pd.DataFrame(np.asarray(values, dtype=np.float64),
                 columns=list(columns)).to_csv(path,
                                               index=False,
                                               float_format='%.17g')


def window_sequences(series: np.ndarray, input_steps: int, output_steps: int,
                     stride: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Overlapping windows of U + V frames, split at frame U.

    There are ``(T_total - (U + V)) // stride + 1`` windows.
    """
    length = input_steps + output_steps
    if stride < 1:
        raise DataError(f'stride must be >= 1, got {stride}')
    if len(series) < length:
        raise DataError(f'series of {len(series)} steps is shorter than one '
                        f'window of {input_steps} + {output_steps}')
    windows = []
    for start in range(0, len(series) - length + 1, stride):
        window = series[start:start + length]
        windows.append((window[:input_steps], window[input_steps:]))
    return windows


def stack_windows(
        windows: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Rejoin ``(x, y)`` windows into one (W, U + V, ...) array."""
    return np.stack([np.concatenate((x, y)) for x, y in windows])


def chronological_splits(series: np.ndarray, train_fraction: float,
                         val_fraction: float) -> Dict[str, np.ndarray]:
    """Cut a series along time into train, val and test segments."""
    n = len(series)
    n_train = int(n * train_fraction)
    n_val = int(n * val_fraction)
    return {
        'train': series[:n_train],
        'val': series[n_train:n_train + n_val],
        'test': series[n_train + n_val:],
    }
