import json

import numpy as np
import pytest
import torch

from motionflow.dataset.data_utils import (SCALE_FLOOR, NormalizationStats,
                                           TrajectoryDataset, entity_mask,
                                           normalize_stats, pad_entities,
                                           read_particle_dataset,
                                           write_particle_dataset)
from motionflow.dataset.simulator import SimConfig, generate_dataset
from motionflow.utils.errors import DataError


def test_scale_floor_for_constant_zero_feature():
    data = np.zeros((2, 3, 1, 2))
    data[..., 0] = [[[1.0]], [[-4.0]]] * np.ones((2, 3, 1))
    stats = normalize_stats(data)
    assert stats.scale[0] == 4.0
    assert stats.scale[1] == SCALE_FLOOR


def test_symmetric_data_normalizes_to_unit_range():
    data = np.array([-2.0, -1.0, 0.5, 2.0]).reshape(1, 4, 1, 1)
    stats = normalize_stats(data)
    normalized = stats.normalize(data)
    assert normalized.min() == -1.0 and normalized.max() == 1.0


def test_normalize_round_trip():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 5, 2, 4)) * [1.0, 10.0, 0.1, 3.0]
    stats = normalize_stats(data)
    assert np.abs(stats.denormalize(stats.normalize(data)) -
                  data).max() < 1e-9
    tensor = torch.as_tensor(data)
    back = stats.denormalize(stats.normalize(tensor))
    assert isinstance(back, torch.Tensor)
    assert torch.allclose(back, tensor, atol=1e-9)


def test_stats_from_reread_dataset_match_manifest(tmp_path):
    config = SimConfig(num_frames=8, input_frames=3, seed=2)
    splits, stats = generate_dataset(config, 3, 1, 1, out_dir=str(tmp_path))
    loaded, loaded_stats, manifest = read_particle_dataset(str(tmp_path))
    assert np.allclose(normalize_stats(loaded['train']).scale,
                       loaded_stats.scale, rtol=1e-12)
    assert np.array_equal(loaded_stats.scale, stats.scale)
    for name in splits:
        assert np.array_equal(loaded[name], splits[name])
    assert manifest['simulation']['seed'] == 2
    assert manifest['counts'] == {'train': 3, 'val': 1, 'test': 1}


def test_pad_entities_and_mask():
    values = np.ones((2, 5, 3, 4))
    padded, num_real = pad_entities(values)
    assert num_real == 3 and padded.shape == (2, 5, 4, 4)
    assert not padded[:, :, 3].any()
    same, _ = pad_entities(np.ones((1, 8, 2)))
    assert same.shape == (1, 8, 2)
    assert entity_mask(3, 4).tolist() == [True, True, True, False]


def test_malformed_normalization_record():
    with pytest.raises(DataError):
        NormalizationStats.from_dict({})


def _write(tmp_path):
    splits = {'train': np.zeros((1, 2, 1, 4)), 'val': np.zeros((1, 2, 1, 4))}
    write_particle_dataset(str(tmp_path), splits,
                           NormalizationStats(np.ones(4)))


def test_missing_or_invalid_manifest(tmp_path):
    with pytest.raises(DataError):
        read_particle_dataset(str(tmp_path))
    (tmp_path / 'manifest.json').write_text('{"counts": ')
    with pytest.raises(DataError, match='invalid JSON'):
        read_particle_dataset(str(tmp_path))


def test_truncated_split_file(tmp_path):
    _write(tmp_path)
    path = tmp_path / 'train.csv'
    lines = path.read_text().splitlines()
    path.write_text('\n'.join(lines[:-1]) + '\n')
    with pytest.raises(DataError, match='rows'):
        read_particle_dataset(str(tmp_path))


def test_wrong_header(tmp_path):
    _write(tmp_path)
    path = tmp_path / 'val.csv'
    path.write_text(path.read_text().replace('vx', 'vz'))
    with pytest.raises(DataError, match='header'):
        read_particle_dataset(str(tmp_path))


def test_missing_geometry(tmp_path):
    _write(tmp_path)
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    del manifest['geometry']
    (tmp_path / 'manifest.json').write_text(json.dumps(manifest))
    with pytest.raises(DataError, match='geometry'):
        read_particle_dataset(str(tmp_path))


def test_trajectory_dataset_windows():
    sequences = np.arange(2 * 6 * 4 * 1, dtype=np.float64).reshape(2, 6, 4, 1)
    dataset = TrajectoryDataset(sequences, 2, 3, dtype=torch.float64)
    assert len(dataset) == 2
    x, y = dataset[1]
    assert x.shape == (2, 4, 1) and y.shape == (3, 4, 1)
    assert torch.equal(x, torch.as_tensor(sequences[1, :2]))
    assert torch.equal(y, torch.as_tensor(sequences[1, 2:5]))


def test_random_crop_stays_inside_sequence():
    sequences = np.arange(10, dtype=np.float64).reshape(1, 10, 1, 1)
    dataset = TrajectoryDataset(sequences, 2, 2, random_crop=True, seed=0)
    starts = {int(dataset[0][0][0, 0, 0]) for _ in range(50)}
    assert starts <= set(range(7))
    assert len(starts) > 1


def test_trajectory_dataset_rejects_short_sequences():
    with pytest.raises(DataError):
        TrajectoryDataset(np.zeros((1, 3, 4, 1)), 2, 2)
    with pytest.raises(DataError):
        TrajectoryDataset(np.zeros((0, 5, 4, 1)), 2, 2)
