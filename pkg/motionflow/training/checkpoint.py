"""Checkpoint container.

Layout, all integers little-endian::

    b'MFLOWCK1'                 8-byte magic
    uint64                      length L of the manifest in bytes
    manifest                    L bytes of UTF-8 JSON (sorted keys)
    payload                     float64 little-endian tensor data

The manifest records the model config, epoch, validation history,
normalization statistics, optimizer hyperparameters and scalar state, and
for every tensor its name, shape, original dtype, byte offset into the
payload and element count. Tensors are stored as float64 so 64-bit models
round-trip bit-exactly.
"""
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from ..dataset.data_utils import NormalizationStats
from ..models.motionflow import MotionFlow
from ..utils.errors import DataError
from .config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b'MFLOWCK1'
FORMAT = 'motionflow-checkpoint'
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference.

    Attributes:
        config: Model configuration the parameters belong to.
        model_state: ``state_dict`` of the model.
        optimizer_state: ``state_dict`` of the optimizer, if saved.
        epoch: Number of completed epochs.
        history: One metrics record per completed epoch.
        normalization: Feature scales of the training data.
        num_entities: Real (unpadded) entity count of the training data.
    """
    config: ModelConfig
    model_state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)
    normalization: Optional[NormalizationStats] = None
    num_entities: Optional[int] = None


class _PayloadWriter:
    def __init__(self):
        self.records = []
        self.chunks = []
        self.offset = 0

    def add(self, name: str, tensor: torch.Tensor) -> str:
        array = np.ascontiguousarray(
            tensor.detach().cpu().to(torch.float64).numpy(), dtype='<f8')
        self.records.append({
            'name': name,
            'shape': list(tensor.shape),
            'dtype': str(tensor.dtype).replace('torch.', ''),
            'offset': self.offset,
            'length': int(array.size),
        })
        data = array.tobytes()
        self.chunks.append(data)
        self.offset += len(data)
        return name


def _optimizer_manifest(state: Dict[str, Any],
                        writer: _PayloadWriter) -> Dict[str, Any]:
    groups = []
    for group in state['param_groups']:
        groups.append({
            key: list(value) if isinstance(value, tuple) else value
            for key, value in group.items()
        })
    entries = {}
    for index, entry in state['state'].items():
        record = {}
        for key, value in entry.items():
            if isinstance(value, torch.Tensor) and value.dim() > 0:
                record[key] = {
                    'tensor': writer.add(f'optimizer.{index}.{key}', value)
                }
            elif isinstance(value, torch.Tensor):
                record[key] = {
                    'scalar': value.item(),
                    'dtype': str(value.dtype).replace('torch.', '')
                }
            else:
                record[key] = {'value': value}
        entries[str(index)] = record
    return {'param_groups': groups, 'state': entries}


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Write ``checkpoint`` to ``path`` atomically."""
    writer = _PayloadWriter()
    for name, tensor in checkpoint.model_state.items():
        writer.add(f'model.{name}', tensor)
    manifest = {
        'format': FORMAT,
        'version': VERSION,
        'config': checkpoint.config.to_dict(),
        'epoch': checkpoint.epoch,
        'history': checkpoint.history,
        'normalization': (checkpoint.normalization.to_dict()
                          if checkpoint.normalization is not None else None),
        'num_entities': checkpoint.num_entities,
        'optimizer': (_optimizer_manifest(checkpoint.optimizer_state, writer)
                      if checkpoint.optimizer_state is not None else None),
    }
    manifest['tensors'] = writer.records
    blob = json.dumps(manifest, sort_keys=True).encode('utf-8')

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f'{path}.tmp'
    with open(tmp, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<Q', len(blob)))
        f.write(blob)
        for chunk in writer.chunks:
            f.write(chunk)
    os.replace(tmp, path)
    logger.debug('saved checkpoint %s (epoch %d)', path, checkpoint.epoch)


def read_manifest(path: str) -> Dict[str, Any]:
    manifest, _ = _read(path)
    return manifest


def _read(path: str):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as exc:
        raise DataError(f'cannot read checkpoint {path}: {exc}') from exc
    if len(data) < 16 or data[:8] != MAGIC:
        raise DataError(f'{path} is not a checkpoint (bad magic)')
    (length, ) = struct.unpack('<Q', data[8:16])
    try:
        manifest = json.loads(data[16:16 + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f'{path}: corrupt manifest: {exc}') from exc
    if manifest.get('format') != FORMAT or manifest.get('version') != VERSION:
        raise DataError(f'{path}: unsupported checkpoint format '
                        f'{manifest.get("format")} v{manifest.get("version")}')
    return manifest, data[16 + length:]


def _tensors(manifest: Dict[str, Any], payload: bytes,
             path: str) -> Dict[str, torch.Tensor]:
    tensors = {}
    for record in manifest['tensors']:
        start, count = record['offset'], record['length']
        if start + 8 * count > len(payload):
            raise DataError(f'{path}: payload of {record["name"]} is truncated')
        array = np.frombuffer(payload, dtype='<f8', count=count, offset=start)
        tensor = torch.from_numpy(array.copy()).view(record['shape'])
        tensors[record['name']] = tensor.to(getattr(torch, record['dtype']))
    return tensors


def _optimizer_state(record: Dict[str, Any],
                     tensors: Dict[str, torch.Tensor]) -> Dict[str, Any]:
    groups = [dict(group) for group in record['param_groups']]
    for group in groups:
        if isinstance(group.get('betas'), list):
            group['betas'] = tuple(group['betas'])
    state = {}
    for index, entry in record['state'].items():
        restored = {}
        for key, value in entry.items():
            if 'tensor' in value:
                restored[key] = tensors[value['tensor']]
            elif 'scalar' in value:
                restored[key] = torch.tensor(value['scalar'],
                                             dtype=getattr(
                                                 torch, value['dtype']))
            else:
                restored[key] = value['value']
        state[int(index)] = restored
    return {'state': state, 'param_groups': groups}


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    manifest, payload = _read(path)
    tensors = _tensors(manifest, payload, path)
    model_state = {
        name[len('model.'):]: tensor
        for name, tensor in tensors.items() if name.startswith('model.')
    }
    normalization = manifest.get('normalization')
    optimizer = manifest.get('optimizer')
    return Checkpoint(
        config=ModelConfig.from_dict(manifest['config']),
        model_state=model_state,
        optimizer_state=(_optimizer_state(optimizer, tensors)
                         if optimizer is not None else None),
        epoch=manifest['epoch'],
        history=manifest['history'],
        normalization=(NormalizationStats.from_dict(normalization)
                       if normalization is not None else None),
        num_entities=manifest.get('num_entities'),
    )


def load_model(path: str):
    """Rebuild the model stored in a checkpoint, ready for inference."""
    checkpoint = load_checkpoint(path)
    model = MotionFlow.from_config(checkpoint.config)
    try:
        model.load_state_dict(checkpoint.model_state)
    except RuntimeError as exc:
        raise DataError(f'{path}: parameters do not match the stored '
                        f'config: {exc}') from exc
    model.eval()
    return model, checkpoint
