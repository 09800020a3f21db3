import json
import os

import numpy as np
import pytest

from motionflow.dataset.series_dataset import write_csv_series
from motionflow.dataset.simulator import SimConfig, generate_dataset
from motionflow.models.motionflow import MotionFlow
from motionflow.training.config import DataConfig, ModelConfig, RunConfig
from motionflow.training.evaluation import ablation_datasets
from motionflow.training.trainer import (EarlyStopping, MotionFlowTrainer,
                                         load_run_data, train)
from motionflow.utils.errors import ConfigError


def test_early_stopping_patience_zero():
    stopper = EarlyStopping(patience=0)
    assert stopper.update(1.0, 1)
    assert not stopper.should_stop
    assert not stopper.update(1.5, 2)
    assert stopper.should_stop
    assert stopper.best == 1.0 and stopper.best_epoch == 1


def test_early_stopping_resets_on_improvement():
    stopper = EarlyStopping(patience=2)
    stopper.update(3.0, 1)
    stopper.update(4.0, 2)
    stopper.update(4.0, 3)
    assert not stopper.should_stop
    assert stopper.update(2.0, 4)
    assert stopper.epochs_since_best == 0


def _run(work_dirs, config):
    train_set, val_set = ablation_datasets(config, num_train=8, num_val=4)
    trainer = MotionFlowTrainer(MotionFlow.from_config(config),
                                train_set,
                                val_set,
                                work_dirs=str(work_dirs),
                                progress=False)
    return trainer.train(max_epochs=2)


def test_training_is_reproducible_and_checkpoints(tmp_path):
    config = ModelConfig.tiny(num_entities=4)
    first = _run(tmp_path / 'a', config)
    second = _run(tmp_path / 'b', config)
    metrics_a = (tmp_path / 'a' / 'metrics.jsonl').read_text()
    metrics_b = (tmp_path / 'b' / 'metrics.jsonl').read_text()
    assert metrics_a == metrics_b
    records = [json.loads(line) for line in metrics_a.splitlines()]
    assert [r['epoch'] for r in records] == [1, 2]
    assert set(records[0]) == {
        'epoch', 'train_nll', 'val_nll', 'best_val_nll', 'grad_norm'
    }
    assert first.history == second.history
    assert first.best_val_nll == min(r['val_nll'] for r in records)
    for name in ('best', 'last'):
        assert (tmp_path / 'a' / 'checkpoints' / f'{name}.ckpt').exists()


def _particle_run(tmp_path):
    sim = SimConfig(num_particles=3, num_frames=6, input_frames=3, seed=1)
    generate_dataset(sim, 4, 2, 2, out_dir=str(tmp_path / 'data'))
    model = ModelConfig.tiny(num_entities=4, feature_dim=4)
    data = DataConfig(dataset_dir=str(tmp_path / 'data'))
    return RunConfig(output_dir=str(tmp_path / 'run'),
                     model=model,
                     simulation=sim,
                     data=data,
                     progress=False)


def test_load_particle_run_data(tmp_path):
    data = load_run_data(_particle_run(tmp_path))
    assert set(data.datasets) == {'train', 'val', 'test'}
    assert data.num_entities == 3
    assert data.position_dims == (0, 1)
    x, y = data.datasets['train'][0]
    assert x.shape == (3, 4, 4) and y.shape == (2, 4, 4)


def test_particle_geometry_mismatch(tmp_path):
    config = _particle_run(tmp_path)
    config.model = ModelConfig.tiny(num_entities=8, feature_dim=4)
    with pytest.raises(ConfigError, match='entities'):
        load_run_data(config)


def test_load_csv_run_data(tmp_path):
    t = np.arange(60, dtype=np.float64)
    values = np.stack([np.sin(t / 5), np.cos(t / 7), t / 60], axis=1)
    path = str(tmp_path / 'series.csv')
    write_csv_series(path, values, ['a', 'b', 'c'])
    config = RunConfig(model=ModelConfig.tiny(num_entities=4),
                       data=DataConfig(csv_path=path, stride=2,
                                       train_fraction=0.6,
                                       val_fraction=0.2))
    data = load_run_data(config)
    assert data.num_entities == 3
    assert data.position_dims == ()
    assert len(data.datasets['train']) == (36 - 5) // 2 + 1
    x, _ = data.datasets['train'][0]
    assert x.shape == (3, 4, 1)
    assert np.abs(data.datasets['train'].data.numpy()).max() <= 1.0


def test_train_entry_point(tmp_path):
    config = _particle_run(tmp_path)
    config.model = ModelConfig.tiny(num_entities=4, feature_dim=4,
                                    max_epochs=1)
    model, result = train(config)
    assert result.epochs == 1
    assert isinstance(model, MotionFlow)
    assert model.config.real_entities == 3
    assert os.path.exists(os.path.join(config.output_dir, 'checkpoints',
                                       'last.ckpt'))


def test_train_rejects_conflicting_real_entities(tmp_path):
    config = _particle_run(tmp_path)
    config.model = ModelConfig.tiny(num_entities=4, feature_dim=4,
                                    num_real_entities=4, max_epochs=1)
    with pytest.raises(ConfigError, match='real entities'):
        train(config)
