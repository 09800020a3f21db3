import pytest
import torch

from motionflow.utils.errors import ConfigError
from motionflow.utils.utils import WindowSampler, seed_everything


def test_seed_everything_repeats_draws():
    first = torch.randn(3, generator=seed_everything(7))
    global_first = torch.rand(2)
    second = torch.randn(3, generator=seed_everything(7))
    assert torch.equal(first, second)
    assert torch.equal(global_first, torch.rand(2))


def test_window_sampler_stays_inside_chunk():
    sampler = WindowSampler(6, 4, seed=0)
    starts = {sampler() for _ in range(50)}
    assert starts <= {0, 1, 2}
    a, b = WindowSampler(6, 4, seed=3), WindowSampler(6, 4, seed=3)
    assert [a() for _ in range(5)] == [b() for _ in range(5)]
    assert WindowSampler(4, 4)() == 0
    with pytest.raises(ConfigError):
        WindowSampler(3, 4)
