import pytest
import torch

from motionflow.models.motionflow import MotionFlow
from motionflow.training.config import ModelConfig


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig.tiny()


@pytest.fixture
def tiny_model(tiny_config):
    return MotionFlow.from_config(tiny_config)


@pytest.fixture
def tiny_batch(tiny_config, generator):
    c = tiny_config
    x = torch.randn(4, c.input_steps, c.num_entities, c.feature_dim,
                    generator=generator, dtype=torch.float64)
    y = torch.randn(4, c.output_steps, c.num_entities, c.feature_dim,
                    generator=generator, dtype=torch.float64)
    return 0.5 * x, 0.5 * y
