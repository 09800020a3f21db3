import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from motionflow.dataset.simulator import SimConfig
from motionflow.utils.errors import ConfigError
from motionflow.utils.utils import DTYPES

SQUEEZE_FACTOR = 4


def _from_dict(cls, config: Dict[str, Any], section: str):
    """Instantiate a config dataclass, rejecting unknown keys."""
    if not isinstance(config, dict):
        raise ConfigError(f'{section} must be a JSON object')
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(config) - set(names))
    if unknown:
        raise ConfigError(f'unknown key(s) in {section}: {", ".join(unknown)}')
    kwargs = {}
    for key, value in config.items():
        default = getattr(cls, key, None)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


@dataclass
class ModelConfig:
    """Config of the model, its optimizer and its training schedule.

    :param input_steps: Observed frames U.
    :type input_steps: int

    :param output_steps: Predicted frames V.
    :type output_steps: int

    :param num_entities: Entities N per frame, padding included; must be a
        multiple of the squeeze factor 4.
    :type num_entities: int

    :param num_real_entities: Leading entities that hold data; the rest of
        the entity axis is padding, filled with noise in the likelihood and
        left out of its per-dimension count. None means no padding.
    :type num_real_entities: Optional[int]

    :param feature_dim: Features D per entity.
    :type feature_dim: int

    :param num_flow_steps: Flow steps K.
    :type num_flow_steps: int

    :param use_masked_conditioner: Ablation flag A; False swaps the masked
        autoregressive networks for two plain convolutions.
    :type use_masked_conditioner: bool

    :param use_dynamic_prior: Ablation flag B; False uses a standard normal
        prior over all latents.
    :type use_dynamic_prior: bool

    :param use_residual_net: Ablation flag C; False replaces the residual
        stack of the prior by a single convolution. Requires flag B.
    :type use_residual_net: bool

    :param max_grad_norm: Gradient-norm clipping threshold; 0 disables it.
    :type max_grad_norm: float

    :param patience: Epochs without validation improvement before stopping.
    :type patience: int
    """

    input_steps: int = 10
    output_steps: int = 25
    num_entities: int = 4
    num_real_entities: Optional[int] = None
    feature_dim: int = 4
    num_flow_steps: int = 8
    arn_channels: Tuple[int, int] = (32, 16)
    arn_kernel: int = 3
    arn_dilation: int = 2
    fc_hidden: int = 64
    context_hidden: int = 8
    coupling_hidden: int = 128
    prior_width: int = 64
    prior_dilations: Tuple[int, ...] = (1, 2, 4)
    plain_conditioner_width: int = 256
    use_masked_conditioner: bool = True
    use_dynamic_prior: bool = True
    use_residual_net: bool = True
    precision: str = 'f32'
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_grad_norm: float = 10.0
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'ModelConfig':
        return _from_dict(cls, config, 'model')

    @classmethod
    def tiny(cls, **overrides) -> 'ModelConfig':
        """Small 64-bit configuration for oracle tests and ablation grids."""
        config = dict(input_steps=3,
                      output_steps=2,
                      num_entities=16,
                      feature_dim=1,
                      num_flow_steps=2,
                      arn_channels=(8, 4),
                      fc_hidden=16,
                      context_hidden=4,
                      coupling_hidden=16,
                      prior_width=8,
                      plain_conditioner_width=16,
                      precision='f64',
                      batch_size=4)
        config.update(overrides)
        return cls(**config)

    def to_dict(self) -> Dict[str, Any]:
        return {
            key: list(value) if isinstance(value, tuple) else value
            for key, value in dataclasses.asdict(self).items()
        }

    @property
    def x_channels(self) -> int:
        return self.feature_dim

    @property
    def frame_channels(self) -> int:
        """C_y: channels of a squeezed output frame."""
        return self.feature_dim * SQUEEZE_FACTOR

    @property
    def frame_width(self) -> int:
        """N_f: entity width of a squeezed output frame."""
        return self.num_entities // SQUEEZE_FACTOR

    @property
    def frame_dim(self) -> int:
        return self.frame_channels * self.frame_width

    @property
    def real_entities(self) -> int:
        if self.num_real_entities is None:
            return self.num_entities
        return self.num_real_entities

    @property
    def modelled_dims(self) -> int:
        """Values per sample the NLL is normalized by: V * D * real entities."""
        return self.output_steps * self.feature_dim * self.real_entities

    @property
    def conditioner_features(self) -> int:
        """Length of the flattened context map fed to the FC heads."""
        return self.x_channels * self.input_steps * self.num_entities

    def validate(self) -> 'ModelConfig':
        positive = ('input_steps', 'output_steps', 'num_entities',
                    'feature_dim', 'num_flow_steps', 'fc_hidden',
                    'context_hidden', 'coupling_hidden', 'prior_width',
                    'plain_conditioner_width', 'batch_size', 'max_epochs')
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f'model.{name} must be positive')
        if self.num_entities % SQUEEZE_FACTOR != 0:
            raise ConfigError(
                f'model.num_entities={self.num_entities} is not a multiple of '
                f'{SQUEEZE_FACTOR}; pad the entity axis when building the dataset')
        if not 1 <= self.real_entities <= self.num_entities:
            raise ConfigError(
                f'model.num_real_entities={self.num_real_entities} must lie '
                f'in [1, {self.num_entities}]')
        if len(self.arn_channels) != 2 or min(self.arn_channels) < 1:
            raise ConfigError('model.arn_channels needs two positive widths')
        if self.arn_kernel % 2 == 0 or self.arn_dilation < 1:
            raise ConfigError('model.arn_kernel must be odd and '
                              'model.arn_dilation >= 1')
        if not self.prior_dilations or min(self.prior_dilations) < 1:
            raise ConfigError('model.prior_dilations must be positive')
        if self.use_residual_net and not self.use_dynamic_prior:
            raise ConfigError('use_residual_net (C) requires '
                              'use_dynamic_prior (B)')
        if self.precision not in DTYPES:
            raise ConfigError(f'model.precision must be one of {sorted(DTYPES)}')
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ConfigError('learning rate and adam_eps must be positive')
        if self.weight_decay < 0 or self.max_grad_norm < 0:
            raise ConfigError('weight_decay and max_grad_norm must be >= 0')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError('beta1 and beta2 must lie in [0, 1)')
        if self.patience < 0:
            raise ConfigError('model.patience must be >= 0')
        return self


@dataclass
class DataConfig:
    """Where the data comes from and how it is cut into samples.

    :param dataset_dir: Directory of a simulated dataset (manifest + CSV).
    :type dataset_dir: str

    :param csv_path: Generic multivariate series; used instead of
        ``dataset_dir`` when set.
    :type csv_path: Optional[str]

    :param features_per_entity: Consecutive CSV columns grouped into one entity.
    :type features_per_entity: int

    :param random_crop: Draw each training window from a random frame of a
        stride-aligned chunk of ``crop_length`` frames.
    :type random_crop: bool

    :param position_dims: Feature indices scored by the MSE evaluation; empty
        means every feature.
    :type position_dims: Tuple[int, ...]
    """

    dataset_dir: str = 'data/particles'
    csv_path: Optional[str] = None
    features_per_entity: int = 1
    stride: int = 10
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    random_crop: bool = False
    crop_length: int = 0
    position_dims: Tuple[int, ...] = (0, 1)

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'DataConfig':
        return _from_dict(cls, config, 'data')

    def validate(self) -> 'DataConfig':
        if self.features_per_entity < 1 or self.stride < 1:
            raise ConfigError('data.features_per_entity and data.stride '
                              'must be positive')
        if not (0 < self.train_fraction < 1 and 0 <= self.val_fraction < 1
                and self.train_fraction + self.val_fraction < 1):
            raise ConfigError('data split fractions must leave a test split')
        if self.crop_length < 0:
            raise ConfigError('data.crop_length must be >= 0')
        return self


@dataclass
class RunConfig:
    """Top-level configuration of a command-line run.

    Every key has a default; a JSON file only needs the keys it changes.
    """

    output_dir: str = 'work_dirs'
    model: ModelConfig = field(default_factory=ModelConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    num_train: int = 1000
    num_val: int = 100
    num_test: int = 100
    horizons: Tuple[int, ...] = (1, 15, 25)
    num_samples: int = 10
    temperature: float = 0.7
    num_threads: int = 0
    progress: bool = True

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'RunConfig':
        config = dict(config)
        sections = {
            'model': ModelConfig.from_dict,
            'simulation': SimConfig.from_dict,
            'data': DataConfig.from_dict,
        }
        for key, build in sections.items():
            if key in config:
                config[key] = build(config[key])
        return _from_dict(cls, config, 'config')

    @classmethod
    def from_json(cls, path: str) -> 'RunConfig':
        try:
            with open(path, encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f'cannot read config {path}: {exc}') from exc
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data['model'] = self.model.to_dict()
        return json.loads(json.dumps(data))

    def validate(self) -> 'RunConfig':
        self.model.validate()
        self.simulation.validate()
        self.data.validate()
        if min(self.num_train, self.num_val, self.num_test) < 1:
            raise ConfigError('num_train, num_val and num_test must be >= 1')
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError('horizons must be positive integers')
        if self.num_samples < 1 or self.temperature < 0:
            raise ConfigError('num_samples must be >= 1 and temperature >= 0')
        return self

    def horizons_for(self, output_steps: int) -> List[int]:
        """Configured horizons that fit into ``output_steps`` predicted frames."""
        return [h for h in self.horizons if h <= output_steps]
