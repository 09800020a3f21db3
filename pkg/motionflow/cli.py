"""Command-line entry point: ``motionflow <command> [options]``.

Exit codes: 0 on success, 1 on usage, configuration or data errors, 2 on
runtime and numerical failures.
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .__version__ import __version__
from .dataset.data_utils import read_manifest
from .dataset.series_dataset import write_csv_series
from .dataset.simulator import generate_dataset
from .training.checkpoint import load_model
from .training.config import ModelConfig, RunConfig
from .training.evaluation import (ablation_ordering, ablation_table,
                                  averaging_gain, evaluate_baseline,
                                  evaluate_mse, final_val_nll,
                                  median_sample_mse, run_ablation_grid)
from .training.trainer import load_run_data, train
from .training.verification import SUITES, run_verification
from .utils.errors import ConfigError, DataError, MotionFlowError
from .utils.plotting import plot_svg
from .utils.utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class _ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as :class:`ConfigError` (exit code 1)."""
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='JSON run configuration')
    parser.add_argument('--seed',
                        type=int,
                        help='seed of the model and the simulation')
    parser.add_argument('--out', help='output directory (output_dir)')
    parser.add_argument('--precision',
                        choices=('f32', 'f64'),
                        help='floating point precision of the model')
    parser.add_argument('--dataset-dir', help='simulated dataset directory')
    parser.add_argument('--csv', help='CSV series used instead of a dataset')
    parser.add_argument('--no-progress',
                        action='store_true',
                        help='disable progress bars')
    parser.add_argument('-v',
                        '--verbose',
                        action='store_true',
                        help='debug logging')


def _checkpoint_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--checkpoint',
                        help='checkpoint file (default: '
                        '<out>/checkpoints/best.ckpt)')
    parser.add_argument('--split',
                        default='test',
                        choices=('train', 'val', 'test'),
                        help='dataset split')


def _sampling_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--mode',
                        default='mean',
                        choices=('mean', 'sample', 'average'),
                        help='prediction mode')
    parser.add_argument('--temperature', type=float, help='sampling temperature')
    parser.add_argument('--num-samples',
                        type=int,
                        help='paths averaged in average mode')
    parser.add_argument('--index',
                        type=int,
                        default=0,
                        help='sample of the split to forecast')


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog='motionflow',
        description='Conditional normalizing flow for multi-entity motion '
        'forecasting.')
    parser.add_argument('--version',
                        action='version',
                        version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sub = commands.add_parser('simulate', help='generate particle trajectories')
    _common(sub)

    sub = commands.add_parser('train', help='train a model')
    _common(sub)
    sub.add_argument('--epochs', type=int, help='maximum number of epochs')

    sub = commands.add_parser('eval', help='MSE per horizon on a split')
    _common(sub)
    _checkpoint_args(sub)
    sub.add_argument('--temperature', type=float, help='sampling temperature')
    sub.add_argument('--num-samples',
                     type=int,
                     help='paths averaged in average mode')

    for name, text in (('predict', 'forecast one sample to CSV'),
                       ('plot', 'plot one forecast as SVG')):
        sub = commands.add_parser(name, help=text)
        _common(sub)
        _checkpoint_args(sub)
        _sampling_args(sub)
        sub.add_argument('--output', help='output file')

    sub = commands.add_parser('ablate', help='train the component ablations')
    _common(sub)
    sub.add_argument('--epochs', type=int, default=5, help='epochs per variant')

    sub = commands.add_parser('verify', help='run the numerical oracle suites')
    _common(sub)
    sub.add_argument('--suite',
                     action='append',
                     choices=list(SUITES),
                     help='suite to run (repeatable, default: all)')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.model.seed = args.seed
        config.simulation.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if args.precision is not None:
        config.model.precision = args.precision
    if args.dataset_dir is not None:
        config.data.dataset_dir = args.dataset_dir
    if args.csv is not None:
        config.data.csv_path = args.csv
    if args.no_progress:
        config.progress = False
    if getattr(args, 'epochs', None) is not None and args.command == 'train':
        config.model.max_epochs = args.epochs
    if getattr(args, 'temperature', None) is not None:
        config.temperature = args.temperature
    if getattr(args, 'num_samples', None) is not None:
        config.num_samples = args.num_samples
    return config.validate()


def _write_json(path: str, data) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def _checkpoint_path(args, config: RunConfig) -> str:
    return args.checkpoint or os.path.join(config.output_dir, 'checkpoints',
                                           'best.ckpt')


def _load(args, config: RunConfig):
    """Model, checkpoint and run data, geometry taken from the checkpoint."""
    model, checkpoint = load_model(_checkpoint_path(args, config))
    config.model = checkpoint.config
    data = load_run_data(config)
    return model, checkpoint, data


def cmd_simulate(args, config: RunConfig) -> int:
    generate_dataset(config.simulation,
                     config.num_train,
                     config.num_val,
                     config.num_test,
                     out_dir=config.data.dataset_dir,
                     progress=config.progress)
    print(f'dataset written to {config.data.dataset_dir}')
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    _write_json(os.path.join(config.output_dir, 'config.json'),
                config.to_dict())
    _, result = train(config)
    summary = {
        'initial_val_nll': result.initial_val_nll,
        'best_val_nll': result.best_val_nll,
        'best_epoch': result.best_epoch,
        'epochs': result.epochs,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _mse_table(reports: Dict[str, Dict[int, float]]) -> str:
    horizons = sorted({h for report in reports.values() for h in report})
    lines = [f'{"forecast":<16}' + ''.join(f'{f"step {h}":>14}'
                                          for h in horizons)]
    for name, report in reports.items():
        lines.append(f'{name:<16}' + ''.join(f'{report[h]:>14.4e}'
                                            for h in horizons))
    return '\n'.join(lines)


def cmd_eval(args, config: RunConfig) -> int:
    model, checkpoint, data = _load(args, config)
    dataset = data.datasets[args.split]
    horizons = config.horizons_for(model.config.output_steps)
    if not horizons:
        raise ConfigError(f'no configured horizon fits into '
                          f'{model.config.output_steps} predicted steps')
    shared = dict(stats=data.stats,
                  num_entities=data.num_entities,
                  position_dims=data.position_dims)
    reports = {
        'mean':
        evaluate_mse(model, dataset, horizons, mode='mean', **shared),
        'average':
        evaluate_mse(model,
                     dataset,
                     horizons,
                     mode='average',
                     temperature=config.temperature,
                     num_samples=config.num_samples,
                     seed=model.config.seed,
                     **shared),
        'sample-median':
        median_sample_mse(model,
                          dataset,
                          horizons,
                          temperature=config.temperature,
                          num_samples=config.num_samples,
                          seed=model.config.seed,
                          **shared),
        'constant-velocity':
        evaluate_baseline(dataset, horizons, model.config.output_steps,
                          **shared),
    }
    gain = averaging_gain(reports['average'], reports['sample-median'])
    _write_json(os.path.join(config.output_dir, f'eval_{args.split}.json'), {
        'checkpoint_epoch': checkpoint.epoch,
        'split': args.split,
        'reports': {name: r.to_dict()
                    for name, r in reports.items()},
        'average_not_worse_than_median_sample':
        {str(h): ok
         for h, ok in gain.items()},
    })
    print('normalized coordinates')
    print(_mse_table({n: r.normalized for n, r in reports.items()}))
    print('original coordinates')
    print(_mse_table({n: r.denormalized for n, r in reports.items()}))
    if not all(gain.values()):
        logger.warning('averaged forecast is worse than the median single '
                       'sample at step(s) %s',
                       [h for h, ok in gain.items() if not ok])
    return EXIT_OK


def _forecast(args, config: RunConfig):
    model, _, data = _load(args, config)
    dataset = data.datasets[args.split]
    if not 0 <= args.index < len(dataset):
        raise ConfigError(f'--index {args.index} outside the {len(dataset)} '
                          f'samples of the {args.split} split')
    x, y = dataset[args.index]
    y_hat = model.predict(x[None],
                          mode=args.mode,
                          temperature=config.temperature,
                          num_samples=config.num_samples,
                          seed=model.config.seed)[0]

    def original(frames: torch.Tensor) -> np.ndarray:
        real = frames[:, :data.num_entities]
        return data.stats.denormalize(real).cpu().numpy()

    return data, original(x), original(y), original(y_hat)


def _feature_names(data, features: int) -> List[str]:
    if data.position_dims and features == 4:
        return ['x', 'y', 'vx', 'vy']
    return [f'feature_{k}' for k in range(features)]


def cmd_predict(args, config: RunConfig) -> int:
    data, _, _, y_hat = _forecast(args, config)
    frames, particles, features = y_hat.shape
    index = np.indices((frames, particles)).reshape(2, -1).T
    rows = np.concatenate((index, y_hat.reshape(-1, features)), axis=1)
    path = args.output or os.path.join(config.output_dir,
                                       f'prediction_{args.index}.csv')
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_csv_series(path, rows,
                     ['frame', 'entity'] + _feature_names(data, features))
    print(f'prediction written to {path}')
    return EXIT_OK


def cmd_plot(args, config: RunConfig) -> int:
    data, x, y, y_hat = _forecast(args, config)
    if y.shape[-1] < 2:
        raise ConfigError('plotting needs at least two features per entity')
    bounds = None
    if config.data.csv_path is None:
        simulation = read_manifest(config.data.dataset_dir).get('simulation')
        if simulation:
            half = simulation['box_half_width']
            bounds = (-half, half, -half, half)
    dims = list(data.position_dims) or [0, 1]
    path = args.output or os.path.join(config.output_dir,
                                       f'prediction_{args.index}.svg')
    plot_svg(np.concatenate((x, y))[..., dims], y_hat[..., dims], path, bounds)
    print(f'plot written to {path}')
    return EXIT_OK


def cmd_ablate(args, config: RunConfig) -> int:
    base = ModelConfig.tiny(seed=config.model.seed)
    results = run_ablation_grid(base,
                                epochs=args.epochs,
                                work_dirs=os.path.join(config.output_dir,
                                                       'ablation'),
                                progress=config.progress)
    ordering = ablation_ordering(results)
    _write_json(
        os.path.join(config.output_dir, 'ablation.json'), {
            'variants': {
                label: {
                    'best_val_nll': r.best_val_nll,
                    'final_val_nll': final_val_nll(r),
                    'epochs': r.epochs,
                }
                for label, r in results.items()
            },
            'full_model_not_worse': ordering,
        })
    print(ablation_table(results))
    worse = [label for label, ok in ordering.items() if not ok]
    if worse:
        logger.warning('ABC ends above ablation(s) %s in validation NLL',
                       worse)
    return EXIT_OK


def cmd_verify(args, config: RunConfig) -> int:
    results = run_verification(args.suite, seed=config.model.seed)
    for r in results:
        print(f'{"PASS" if r.passed else "FAIL"}  {r.name:<16} '
              f'{r.value:.3e} <= {r.threshold:.1e}  ({r.seconds:.1f}s)  '
              f'{r.detail}')
    _write_json(os.path.join(config.output_dir, 'verify.json'),
                [dataclasses.asdict(r) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'eval': cmd_eval,
    'predict': cmd_predict,
    'plot': cmd_plot,
    'ablate': cmd_ablate,
    'verify': cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(logging.DEBUG if args.verbose else logging.INFO)
        config = resolve_config(args)
        if config.num_threads > 0:
            torch.set_num_threads(config.num_threads)
        return COMMANDS[args.command](args, config)
    except (ConfigError, DataError) as exc:
        logger.error('%s', exc)
        return EXIT_USAGE
    except (MotionFlowError, RuntimeError, ArithmeticError) as exc:
        logger.error('%s: %s', type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
