import numpy as np
import pytest
import torch

from motionflow.dataset.data_utils import NormalizationStats
from motionflow.training.checkpoint import (Checkpoint, load_checkpoint,
                                            load_model, read_manifest,
                                            save_checkpoint)
from motionflow.training.optimizer import adam_step, build_optimizer
from motionflow.training.verification import randomize_parameters_
from motionflow.utils.errors import DataError


def _trained(model, batch):
    optimizer = build_optimizer(model.parameters(), model.config)
    x, y = batch
    model.nll(x, y).backward()
    adam_step(optimizer, model.parameters(), model.config.max_grad_norm)
    return optimizer


def test_round_trip_is_bit_exact(tmp_path, tiny_model, tiny_batch,
                                 generator):
    randomize_parameters_(tiny_model, generator)
    optimizer = _trained(tiny_model, tiny_batch)
    path = str(tmp_path / 'model.ckpt')
    stats = NormalizationStats(np.array([2.5]))
    save_checkpoint(
        path,
        Checkpoint(config=tiny_model.config,
                   model_state=tiny_model.state_dict(),
                   optimizer_state=optimizer.state_dict(),
                   epoch=3,
                   history=[{'epoch': 3, 'val_nll': 1.25}],
                   normalization=stats,
                   num_entities=13))
    loaded = load_checkpoint(path)
    assert loaded.config == tiny_model.config
    assert loaded.epoch == 3 and loaded.num_entities == 13
    assert loaded.history == [{'epoch': 3, 'val_nll': 1.25}]
    assert np.array_equal(loaded.normalization.scale, stats.scale)
    for name, tensor in tiny_model.state_dict().items():
        assert loaded.model_state[name].dtype == tensor.dtype
        assert torch.equal(loaded.model_state[name], tensor)

    restored = build_optimizer(tiny_model.parameters(), tiny_model.config)
    restored.load_state_dict(loaded.optimizer_state)
    original = optimizer.state_dict()
    for index, entry in original['state'].items():
        for key, value in entry.items():
            assert torch.equal(restored.state_dict()['state'][index][key],
                               value)
    assert restored.param_groups[0]['lr'] == original['param_groups'][0]['lr']


def test_load_model_predicts_like_the_original(tmp_path, tiny_model,
                                               tiny_batch, generator):
    randomize_parameters_(tiny_model, generator)
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(
        path,
        Checkpoint(config=tiny_model.config,
                   model_state=tiny_model.state_dict()))
    model, checkpoint = load_model(path)
    assert checkpoint.optimizer_state is None
    assert checkpoint.normalization is None
    x, _ = tiny_batch
    assert torch.equal(model.predict(x), tiny_model.predict(x))
    assert read_manifest(path)['format'] == 'motionflow-checkpoint'


def test_bad_magic(tmp_path):
    path = tmp_path / 'broken.ckpt'
    path.write_bytes(b'NOTACKPT' + bytes(16))
    with pytest.raises(DataError, match='magic'):
        load_checkpoint(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(str(tmp_path / 'absent.ckpt'))


def test_truncated_payload(tmp_path, tiny_model):
    path = tmp_path / 'model.ckpt'
    save_checkpoint(
        str(path),
        Checkpoint(config=tiny_model.config,
                   model_state=tiny_model.state_dict()))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match='truncated'):
        load_checkpoint(str(path))
