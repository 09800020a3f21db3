import numpy as np
import pytest

from motionflow.dataset.data_utils import prepare_sequences
from motionflow.dataset.simulator import (ParticleTrajectory, SimConfig,
                                          close_range_indicator,
                                          generate_dataset, repulsion,
                                          simulate_trajectory, step_dynamics)
from motionflow.utils.errors import ConfigError


def _state(*particles):
    return np.array(particles, dtype=np.float64)


def test_free_particle_moves_with_its_velocity():
    config = SimConfig(num_particles=1)
    state = _state([1.0, -1.0, 0.5, 0.25])
    nxt = step_dynamics(state, config)
    assert np.allclose(nxt[0, :2], [1.05, -0.975])
    assert np.array_equal(nxt[0, 2:], state[0, 2:])


def test_fixed_velocity_particles_ignore_repulsion():
    config = SimConfig(num_particles=2)
    state = _state([0.0, 0.0, 0.3, 0.0], [0.5, 0.0, 0.0, 0.0])
    nxt = step_dynamics(state, config)
    assert np.array_equal(nxt[0, 2:], state[0, 2:])


def test_close_particle_is_pushed_away():
    config = SimConfig(num_particles=2)
    state = _state([0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0])
    assert np.allclose(repulsion(state[:, :2], config), [2.5, 0.0])
    nxt = step_dynamics(state, config)
    assert nxt[1, 2] > 0
    assert np.linalg.norm(nxt[1, :2] - nxt[0, :2]) > 0.5


def test_no_repulsion_outside_radius():
    config = SimConfig(num_particles=2)
    positions = np.array([[0.0, 0.0], [1.5, 0.0]])
    assert np.array_equal(repulsion(positions, config), np.zeros(2))


def test_wall_reflection():
    config = SimConfig(num_particles=1)
    nxt = step_dynamics(_state([4.95, 0.0, 1.0, 0.2]), config)
    assert nxt[0, 0] == 5.0
    assert nxt[0, 2] == -1.0 and nxt[0, 3] == 0.2


def test_trajectories_stay_in_arena():
    config = SimConfig(num_frames=300)
    frames = simulate_trajectory(config, np.random.default_rng(3)).frames
    assert frames.shape == (300, 3, 4)
    assert np.abs(frames[..., :2]).max() <= config.box_half_width


def test_dataset_is_deterministic_and_shaped():
    config = SimConfig(seed=7)
    first, stats = generate_dataset(config, 4, 2, 2)
    second, _ = generate_dataset(config, 4, 2, 2)
    for name in first:
        assert np.array_equal(first[name], second[name])
    assert first['train'].shape == (4, 35, 3, 4)
    x, y = first['train'][0, :10], first['train'][0, 10:]
    assert x.shape == (10, 3, 4) and y.shape == (25, 3, 4)
    normalized, num_real = prepare_sequences(first['train'], stats)
    assert num_real == 3 and normalized.shape == (4, 35, 4, 4)
    assert np.abs(normalized).max() <= 1.0
    assert not normalized[:, :, 3].any()


def test_dataset_writes_manifest(tmp_path):
    generate_dataset(SimConfig(num_frames=12, input_frames=4), 2, 1, 1,
                     out_dir=str(tmp_path))
    assert (tmp_path / 'manifest.json').exists()
    for name in ('train', 'val', 'test'):
        assert (tmp_path / f'{name}.csv').exists()


def test_close_range_indicator_toggles():
    config = SimConfig(num_particles=2)
    state = _state([-2.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0])
    frames = [state]
    for _ in range(200):
        frames.append(step_dynamics(frames[-1], config))
    indicator = close_range_indicator(ParticleTrajectory(np.stack(frames)),
                                      0, 1, config.interaction_radius)
    assert not indicator[0]
    assert indicator.any() and not indicator.all()


def test_invalid_simulation_config():
    with pytest.raises(ConfigError):
        SimConfig(num_frames=5, input_frames=5).validate()
    with pytest.raises(ConfigError):
        SimConfig.from_dict({'particles': 3})
    with pytest.raises(ConfigError):
        generate_dataset(SimConfig(), 0, 1, 1)
