"""Synthetic interacting-particle trajectories.

All particles but the last move with a fixed velocity. The last one moves
freely and is pushed away by any other particle closer than the
interaction radius. Every particle reflects off the walls of a square
arena.
"""
import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from tqdm import tqdm

from ..utils.errors import ConfigError
from .data_utils import normalize_stats, write_particle_dataset

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')


@dataclass
class SimConfig:
    """Simulation constants.

    :param num_particles: Particles per rollout; the last one is repelled.
    :type num_particles: int

    :param box_half_width: The arena is ``[-box_half_width, box_half_width]^2``.
    :type box_half_width: float

    :param dt: Seconds per step.
    :type dt: float

    :param repulsion_gain: Peak repulsive acceleration ``k_rep``.
    :type repulsion_gain: float

    :param interaction_radius: Distance under which repulsion applies.
    :type interaction_radius: float

    :param init_extent: Initial positions are drawn in
        ``[-init_extent, init_extent]^2``.
    :type init_extent: float

    :param num_frames: Frames per rollout, T.
    :type num_frames: int

    :param input_frames: Frames given to the model as x, U.
    :type input_frames: int
    """

    num_particles: int = 3
    box_half_width: float = 5.0
    dt: float = 0.1
    repulsion_gain: float = 5.0
    interaction_radius: float = 1.0
    speed_min: float = 0.2
    speed_max: float = 1.0
    init_extent: float = 2.0
    num_frames: int = 35
    input_frames: int = 10
    seed: int = 0

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'SimConfig':
        if not isinstance(config, dict):
            raise ConfigError('simulation must be a JSON object')
        unknown = sorted(set(config) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(
                f'unknown key(s) in simulation: {", ".join(unknown)}')
        return cls(**config)

    def validate(self) -> 'SimConfig':
        if self.num_particles < 1:
            raise ConfigError('simulation.num_particles must be >= 1')
        if self.dt <= 0 or self.interaction_radius <= 0:
            raise ConfigError('simulation.dt and interaction_radius must be > 0')
        if self.box_half_width <= 0 or not (
                0 < self.init_extent <= self.box_half_width):
            raise ConfigError('simulation.init_extent must lie in '
                              '(0, box_half_width]')
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigError('simulation speeds need 0 <= speed_min <= '
                              'speed_max')
        if self.input_frames < 1 or self.num_frames < self.input_frames + 1:
            raise ConfigError('simulation.num_frames must exceed input_frames')
        return self


@dataclass
class ParticleTrajectory:
    """One rollout.

    :param frames: Array of shape (T, N, 4) holding (x, y, vx, vy).
    :type frames: np.ndarray
    """

    frames: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.frames[..., :2]

    @property
    def velocities(self) -> np.ndarray:
        return self.frames[..., 2:]


def repulsion(positions: np.ndarray, config: SimConfig) -> np.ndarray:
    """Acceleration of the last particle from every close neighbour."""
    delta = positions[-1] - positions[:-1]
    dist = np.linalg.norm(delta, axis=1)
    close = (dist < config.interaction_radius) & (dist > 0)
    if not close.any():
        return np.zeros(2)
    gain = config.repulsion_gain * (1.0 -
                                    dist[close] / config.interaction_radius)
    unit = delta[close] / dist[close, None]
    return (gain[:, None] * unit).sum(axis=0)


def step_dynamics(state: np.ndarray, config: SimConfig) -> np.ndarray:
    """Advance a (N, 4) state by one semi-implicit Euler step."""
    positions = state[:, :2].copy()
    velocities = state[:, 2:].copy()
    if len(state) > 1:
        velocities[-1] += repulsion(positions, config) * config.dt
    positions += velocities * config.dt

    bound = config.box_half_width
    outside = np.abs(positions) > bound
    velocities[outside] = -velocities[outside]
    np.clip(positions, -bound, bound, out=positions)
    return np.concatenate((positions, velocities), axis=1)


def initial_state(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.num_particles
    positions = rng.uniform(-config.init_extent, config.init_extent, (n, 2))
    speeds = rng.uniform(config.speed_min, config.speed_max, n)
    headings = rng.uniform(0.0, 2 * np.pi, n)
    velocities = speeds[:, None] * np.stack(
        (np.cos(headings), np.sin(headings)), axis=1)
    return np.concatenate((positions, velocities), axis=1)


def simulate_trajectory(config: SimConfig,
                        rng: np.random.Generator,
                        num_frames: Optional[int] = None) -> ParticleTrajectory:
    num_frames = num_frames or config.num_frames
    frames = np.empty((num_frames, config.num_particles, 4))
    frames[0] = initial_state(config, rng)
    for t in range(1, num_frames):
        frames[t] = step_dynamics(frames[t - 1], config)
    return ParticleTrajectory(frames)


def generate_dataset(config: SimConfig,
                     n_train: int,
                     n_val: int,
                     n_test: int,
                     out_dir: Optional[str] = None,
                     progress: bool = False):
    """Simulate independent seeded rollouts for the three splits.

    Rollout i draws from its own child of ``SeedSequence(config.seed)``.
    Normalization scales are computed on the training split only.

    Returns:
        ``(splits, stats)``: a dict of raw arrays (S, T, N, 4) per split and
        the :class:`NormalizationStats`. Both are also written to
        ``out_dir`` when it is given.
    """
    config.validate()
    counts = dict(zip(SPLITS, (n_train, n_val, n_test)))
    if min(counts.values()) < 1:
        raise ConfigError('every split needs at least one sample')
    children = np.random.SeedSequence(config.seed).spawn(sum(counts.values()))
    rollouts = [
        simulate_trajectory(config, np.random.default_rng(child)).frames
        for child in tqdm(children, desc='simulate', disable=not progress)
    ]
    splits = {}
    offset = 0
    for name, count in counts.items():
        splits[name] = np.stack(rollouts[offset:offset + count])
        offset += count
    stats = normalize_stats(splits['train'])
    logger.info('simulated %s rollouts of %d frames; scales %s',
                '/'.join(str(c) for c in counts.values()), config.num_frames,
                np.array2string(stats.scale, precision=4))
    if out_dir is not None:
        write_particle_dataset(out_dir, splits, stats,
                               {'simulation': dataclasses.asdict(config)})
        logger.info('dataset written to %s', os.path.abspath(out_dir))
    return splits, stats


def close_range_indicator(trajectory: ParticleTrajectory, first: int,
                          second: int, radius: float) -> np.ndarray:
    """Boolean per frame: are the two particles closer than ``radius``?"""
    delta = trajectory.positions[:, first] - trajectory.positions[:, second]
    return np.linalg.norm(delta, axis=-1) < radius

