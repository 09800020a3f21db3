import logging
import random
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError

DTYPES = {'f32': torch.float32, 'f64': torch.float64}

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def resolve_dtype(precision: str) -> torch.dtype:
    """Map a precision flag ('f32' or 'f64') to a torch dtype."""
    try:
        return DTYPES[precision]
    except KeyError:
        raise ConfigError(f"precision must be one of {sorted(DTYPES)}, "
                          f"got {precision!r}") from None


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; return a dedicated torch generator."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def setup_logging(level: int = logging.INFO) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


class WindowSampler:
    """Samples the start frame of a window inside a longer chunk.

    Args:
        chunk_length: Number of frames available.
        window_length: Number of frames the window needs.
        seed: Seed of the private generator, for reproducible crops.
    """
    def __init__(self,
                 chunk_length: int,
                 window_length: int,
                 seed: Optional[int] = None):
        if window_length > chunk_length:
            raise ConfigError(f'window of {window_length} frames does not fit '
                              f'a chunk of {chunk_length}')
        self.values = list(range(0, chunk_length - window_length + 1))
        self.rng = np.random.default_rng(seed)

    def __call__(self) -> int:
        return int(self.rng.choice(self.values))
