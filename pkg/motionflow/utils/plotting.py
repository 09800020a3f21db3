"""SVG plots of predicted against ground-truth trajectories.

Ground truth is drawn as a polyline with solid circle markers, predictions
as semi-transparent squares in the same per-particle color. In the SVG,
each particle's ground truth sits in a group ``particle-<i>`` and its
predictions in ``particle-<i>-prediction``.
"""
import logging
import os
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ShapeError  # noqa: E402

logger = logging.getLogger(__name__)

Bounds = Tuple[float, float, float, float]


def fit_bounds(*trajectories: np.ndarray, margin: float = 0.05) -> Bounds:
    """(xmin, xmax, ymin, ymax) covering every point plus a relative margin."""
    points = np.concatenate([t[..., :2].reshape(-1, 2) for t in trajectories])
    low, high = points.min(axis=0), points.max(axis=0)
    pad = np.maximum(high - low, 1e-6) * margin
    return (low[0] - pad[0], high[0] + pad[0], low[1] - pad[1],
            high[1] + pad[1])


def trajectory_figure(ground_truth: np.ndarray,
                      prediction: np.ndarray,
                      bounds: Optional[Bounds] = None,
                      labels: Optional[Sequence[str]] = None,
                      size: float = 6.0):
    """Draw both trajectories on one figure.

    Args:
        ground_truth: Array (T, N, >=2); the first two features are x, y.
        prediction: Array (T', N, >=2) for the same particles.
        bounds: Axis limits; fitted to the data when omitted.
        labels: Legend label per particle.
        size: Figure edge length in inches.

    Returns:
        ``(figure, axes)``. The axes fill the whole figure so data
        coordinates map linearly onto the SVG canvas.
    """
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if ground_truth.ndim != 3 or prediction.ndim != 3:
        raise ShapeError('trajectories must have shape (T, N, features)')
    if ground_truth.shape[1] != prediction.shape[1] or min(
            ground_truth.shape[2], prediction.shape[2]) < 2:
        raise ShapeError(f'ground truth {ground_truth.shape} and prediction '
                         f'{prediction.shape} do not share particles with '
                         f'x, y features')
    num_particles = ground_truth.shape[1]
    labels = labels or [f'particle {i + 1}' for i in range(num_particles)]
    xmin, xmax, ymin, ymax = bounds or fit_bounds(ground_truth, prediction)

    fig = plt.figure(figsize=(size, size))
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_axis_off()
    colors = plt.get_cmap('tab10')
    for i in range(num_particles):
        color = colors(i % 10)
        ax.plot(ground_truth[:, i, 0],
                ground_truth[:, i, 1],
                marker='o',
                markersize=5,
                linewidth=1.2,
                color=color,
                label=f'{labels[i]} (ground truth)',
                gid=f'particle-{i}')
        ax.plot(prediction[:, i, 0],
                prediction[:, i, 1],
                linestyle='none',
                marker='s',
                markersize=7,
                alpha=0.4,
                color=color,
                label=f'{labels[i]} (predicted)',
                gid=f'particle-{i}-prediction')
    ax.legend(loc='upper right', fontsize='small', framealpha=0.8)
    return fig, ax


def plot_svg(ground_truth: np.ndarray,
             prediction: np.ndarray,
             path: str,
             bounds: Optional[Bounds] = None,
             labels: Optional[Sequence[str]] = None) -> str:
    """Write :func:`trajectory_figure` to ``path`` as SVG.

    Output is byte-stable for equal inputs: the SVG id salt and date
    metadata are fixed.
    """
    fig, _ = trajectory_figure(ground_truth, prediction, bounds, labels)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    try:
        with matplotlib.rc_context({'svg.hashsalt': 'motionflow'}):
            fig.savefig(path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    logger.info('wrote %s', path)
    return path
