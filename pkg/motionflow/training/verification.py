"""Numerical oracle suites.

Each suite exercises one guarantee of the model on random parameters and
returns a :class:`SuiteResult`: the flow is a bijection, its log-determinant
matches a finite-difference Jacobian, the masked conditioner networks are
autoregressive, the NLL gradient matches central differences and a fresh
model scores the closed-form initial NLL.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import torch
import torch.nn as nn
from einops import rearrange

from ..models.conditioner import AutoregressiveNetwork
from ..models.data_types import ConditioningBundle, StepConditioning
from ..models.flow import ConditionalFlow, squeeze
from ..models.masking import ORDERINGS, generate_ordering
from ..models.motionflow import MotionFlow
from ..utils.modeling import LOG_2PI, finite_difference_jacobian, gradient_check
from .config import SQUEEZE_FACTOR, ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    """Outcome of one oracle suite.

    Attributes:
        name: Suite name.
        passed: Whether ``value`` stayed within ``threshold``.
        value: Worst observed error of the suite.
        threshold: Accepted bound on ``value``.
        seconds: Wall-clock duration.
        detail: Human readable summary.
    """
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ''


@torch.no_grad()
def randomize_parameters_(module: nn.Module,
                          generator: torch.Generator,
                          std: float = 0.1) -> nn.Module:
    """Overwrite every parameter with N(0, std^2) draws, in place.

    Fresh models are zero-initialized in the heads, which makes most
    oracles trivial; random parameters exercise every path.
    """
    for param in module.parameters():
        param.copy_(
            torch.randn(param.shape, generator=generator, dtype=param.dtype) *
            std)
    return module


def random_bundle(config: ModelConfig,
                  batch_size: int,
                  generator: torch.Generator,
                  std: float = 0.1) -> ConditioningBundle:
    """Random conditioning parameters with the shapes ``config`` implies."""
    dtype = torch.float64 if config.precision == 'f64' else torch.float32
    c, w = config.frame_channels, config.frame_width

    def draw(*shape):
        return torch.randn(shape, generator=generator, dtype=dtype) * std

    steps = [
        StepConditioning(log_scale=draw(batch_size, c),
                         bias=draw(batch_size, c),
                         lower=draw(batch_size, c, c).tril(-1),
                         upper=draw(batch_size, c, c).triu(1),
                         log_diag=draw(batch_size, c),
                         context=draw(batch_size, c // SQUEEZE_FACTOR, 1, w))
        for _ in range(config.num_flow_steps)
    ]
    u = draw(batch_size, config.x_channels, config.input_steps,
             config.num_entities)
    return ConditioningBundle(u=u, steps=steps)


def _flow_config(frame_width: int, num_flow_steps: int,
                 precision: str) -> ModelConfig:
    return ModelConfig.tiny(num_entities=frame_width * SQUEEZE_FACTOR,
                            feature_dim=1,
                            num_flow_steps=num_flow_steps,
                            precision=precision)


def _timed(name: str, threshold: float,
           run: Callable[[], float], detail: str) -> SuiteResult:
    start = time.perf_counter()
    value = run()
    result = SuiteResult(name=name,
                         passed=value <= threshold,
                         value=value,
                         threshold=threshold,
                         seconds=time.perf_counter() - start,
                         detail=detail)
    logger.info('%s: %s (%.3e vs %.1e, %.1fs)', name,
                'ok' if result.passed else 'FAILED', value, threshold,
                result.seconds)
    return result


def flow_bijectivity(num_inputs: int = 100,
                     frame_widths: Sequence[int] = (2, 4),
                     flow_steps: Sequence[int] = (1, 2, 8),
                     precision: str = 'f64',
                     seed: int = 0) -> float:
    """Largest |inverse(forward(y)) - y| over random flows and inputs."""
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for width in frame_widths:
        for k in flow_steps:
            config = _flow_config(width, k, precision)
            flow = ConditionalFlow(config).to(
                torch.float64 if precision == 'f64' else torch.float32)
            randomize_parameters_(flow, generator)
            bundle = random_bundle(config, num_inputs, generator)
            y = torch.randn(num_inputs, 1, 1, config.num_entities,
                            generator=generator,
                            dtype=bundle.u.dtype)
            with torch.no_grad():
                z, _ = flow(y, bundle)
                error = (flow.inverse(z, bundle) - y).abs().max().item()
            worst = max(worst, error)
    return worst


def logdet_oracle(draws: int = 20,
                  frame_widths: Sequence[int] = (2, 4),
                  flow_steps: Sequence[int] = (1, 2),
                  seed: int = 0) -> float:
    """Largest relative gap between the flow logdet and log|det J|.

    J is the finite-difference Jacobian of the flow on one 64-bit frame.
    """
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for draw in range(draws):
        width = frame_widths[draw % len(frame_widths)]
        k = flow_steps[(draw // len(frame_widths)) % len(flow_steps)]
        config = _flow_config(width, k, 'f64')
        flow = ConditionalFlow(config).double()
        randomize_parameters_(flow, generator)
        bundle = random_bundle(config, 1, generator)
        y = torch.randn(1, 1, 1, config.num_entities,
                        generator=generator,
                        dtype=torch.float64)
        with torch.no_grad():
            _, logdet = flow(y, bundle)
        jacobian = finite_difference_jacobian(lambda v: flow(v, bundle)[0], y)
        _, expected = torch.linalg.slogdet(jacobian)
        gap = abs(logdet.item() - expected.item()) / max(
            abs(expected.item()), 1.0)
        worst = max(worst, gap)
    return worst


@torch.no_grad()
def autoregressive_leak(grids: Sequence[tuple] = ((2, 3), (3, 3), (4, 5),
                                                  (5, 5)),
                        channels: int = 2,
                        seed: int = 0) -> float:
    """Largest change of an ARN output cell under perturbations it must ignore.

    Cell j of the input is perturbed; every output cell i with
    ``rank(j) >= rank(i)`` has to stay bit-identical, so the result is 0
    for a correct network.
    """
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for grid in grids:
        for kind in ORDERINGS:
            net = AutoregressiveNetwork(channels, kind, grid, (8, 4), 3,
                                        2).double()
            randomize_parameters_(net, generator, std=0.5)
            rank = torch.from_numpy(generate_ordering(kind, *grid).rank)
            x = torch.randn(1, channels, *grid,
                            generator=generator,
                            dtype=torch.float64)
            base = net(x)
            for j in range(grid[0]):
                for n in range(grid[1]):
                    perturbed = x.clone()
                    perturbed[:, :, j, n] += torch.randn(
                        channels, generator=generator, dtype=torch.float64)
                    change = (net(perturbed) - base).abs().amax(dim=(0, 1))
                    hidden = rank <= rank[j, n]
                    worst = max(worst, change[hidden].max().item())
    return worst


def tiny_batch(config: ModelConfig, batch_size: int,
               generator: torch.Generator) -> tuple:
    """Random (x, y) of the shapes ``config`` expects."""
    dtype = torch.float64 if config.precision == 'f64' else torch.float32
    x = torch.randn(batch_size, config.input_steps, config.num_entities,
                    config.feature_dim, generator=generator, dtype=dtype)
    y = torch.randn(batch_size, config.output_steps, config.num_entities,
                    config.feature_dim, generator=generator, dtype=dtype)
    return x * 0.5, y * 0.5


def nll_gradient(config: Optional[ModelConfig] = None,
                 num_coordinates: int = 200,
                 batch_size: int = 2,
                 seed: int = 0) -> float:
    """Max relative error of the NLL gradient on random coordinates."""
    config = config or ModelConfig.tiny()
    generator = torch.Generator().manual_seed(seed)
    model = MotionFlow.from_config(dataclasses.replace(config,
                                                       precision='f64'))
    randomize_parameters_(model, generator)
    x, y = tiny_batch(model.config, batch_size, generator)
    report = gradient_check(lambda: model.nll(x, y),
                            model.named_parameters(),
                            num_coordinates=num_coordinates,
                            generator=generator)
    for failure in report.failures[:5]:
        logger.warning('gradient mismatch at %s%s: analytic %.6e numeric %.6e',
                       failure.name, list(failure.index), failure.analytic,
                       failure.numeric)
    return report.max_relative_error


def initial_nll(y: torch.Tensor, config: ModelConfig) -> torch.Tensor:
    """Closed-form NLL of a freshly built model in nats per dimension.

    The fresh flow is the squeeze alone. Under the dynamic prior the
    latents are scored as standard-normal increments ``z_t - z_{t-1}``
    with ``z_0 = 0``; otherwise as standard-normal values, and the noise
    standing in for padded entities cancels against its own density.
    """
    b = y.size(0)
    if config.real_entities < config.num_entities:
        if config.use_dynamic_prior:
            raise ValueError('the closed form with padded entities needs '
                             'the standard normal prior')
        real = y[:, :, :config.real_entities]
        return (0.5 * real.pow(2).mean(dim=(1, 2, 3)) + 0.5 * LOG_2PI).mean()
    z = squeeze(rearrange(y, 'b v n d -> (b v) d 1 n'))
    z = rearrange(z, '(b v) c h w -> b v (c h w)', b=b)
    if config.use_dynamic_prior:
        previous = torch.cat((torch.zeros_like(z[:, :1]), z[:, :-1]), dim=1)
        z = z - previous
    return (0.5 * z.pow(2).mean(dim=(1, 2)) + 0.5 * LOG_2PI).mean()


@torch.no_grad()
def initialization_identity(config: Optional[ModelConfig] = None,
                            batch_size: int = 4,
                            seed: int = 0) -> float:
    """|nll(fresh model) - closed form| on a random batch."""
    config = config or ModelConfig.tiny()
    model = MotionFlow.from_config(config)
    x, y = tiny_batch(config, batch_size,
                      torch.Generator().manual_seed(seed))
    return abs(model.nll(x, y).item() - initial_nll(y, config).item())


SUITES: Dict[str, Callable[[int], SuiteResult]] = {
    'bijectivity-f64':
    lambda seed: _timed('bijectivity-f64', 1e-10,
                        lambda: flow_bijectivity(precision='f64', seed=seed),
                        'inverse(forward(y)) == y, 64-bit'),
    'bijectivity-f32':
    lambda seed: _timed('bijectivity-f32', 1e-6,
                        lambda: flow_bijectivity(precision='f32', seed=seed),
                        'inverse(forward(y)) == y, 32-bit'),
    'logdet':
    lambda seed: _timed('logdet', 1e-3, lambda: logdet_oracle(seed=seed),
                        'flow logdet vs finite-difference log|det J|'),
    'autoregressive':
    lambda seed: _timed('autoregressive', 0.0,
                        lambda: autoregressive_leak(seed=seed),
                        'no influence from cells ranked at or after i'),
    'gradient':
    lambda seed: _timed('gradient', 1e-3, lambda: nll_gradient(seed=seed),
                        'NLL gradient vs central differences'),
    'initialization':
    lambda seed: _timed('initialization', 1e-6,
                        lambda: initialization_identity(seed=seed),
                        'fresh model NLL equals the closed form'),
}


def run_verification(names: Optional[Sequence[str]] = None,
                     seed: int = 0) -> List[SuiteResult]:
    """Run the named suites (all by default) in a fixed order."""
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f'unknown suite(s) {unknown}; choose from '
                         f'{list(SUITES)}')
    return [SUITES[name](seed) for name in names]
