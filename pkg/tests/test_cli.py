import json

import pandas as pd
import pytest

from motionflow.cli import EXIT_OK, EXIT_USAGE, main

TINY_RUN = {
    'model': {
        'input_steps': 3,
        'output_steps': 2,
        'num_entities': 4,
        'feature_dim': 4,
        'num_flow_steps': 1,
        'arn_channels': [4, 4],
        'fc_hidden': 8,
        'context_hidden': 4,
        'coupling_hidden': 8,
        'prior_width': 4,
        'plain_conditioner_width': 8,
        'batch_size': 2,
        'max_epochs': 1,
        'precision': 'f64',
    },
    'simulation': {
        'num_particles': 3,
        'num_frames': 5,
        'input_frames': 3,
    },
    'num_train': 4,
    'num_val': 2,
    'num_test': 2,
    'horizons': [1, 2],
    'num_samples': 2,
}


@pytest.fixture
def run_args(tmp_path):
    config = tmp_path / 'run.json'
    config.write_text(json.dumps(TINY_RUN))
    return [
        '--config',
        str(config), '--out',
        str(tmp_path / 'out'), '--dataset-dir',
        str(tmp_path / 'data'), '--no-progress'
    ]


def test_simulate_train_eval_predict_plot(tmp_path, run_args, capsys):
    assert main(['simulate'] + run_args) == EXIT_OK
    assert (tmp_path / 'data' / 'manifest.json').exists()
    capsys.readouterr()

    assert main(['train'] + run_args) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary['epochs'] == 1
    assert (tmp_path / 'out' / 'checkpoints' / 'best.ckpt').exists()
    assert (tmp_path / 'out' / 'config.json').exists()

    assert main(['eval'] + run_args) == EXIT_OK
    report = json.loads((tmp_path / 'out' / 'eval_test.json').read_text())
    assert set(report['reports']) == {
        'mean', 'average', 'sample-median', 'constant-velocity'
    }
    assert set(report['average_not_worse_than_median_sample']) == {'1', '2'}
    assert set(report['reports']['mean']['normalized']) == {'1', '2'}
    assert 'original coordinates' in capsys.readouterr().out

    output = tmp_path / 'forecast.csv'
    assert main(['predict', '--mode', 'sample', '--output',
                 str(output)] + run_args) == EXIT_OK
    forecast = pd.read_csv(output)
    assert list(forecast.columns) == ['frame', 'entity', 'x', 'y', 'vx', 'vy']
    assert len(forecast) == 2 * 3

    plot = tmp_path / 'forecast.svg'
    assert main(['plot', '--output', str(plot)] + run_args) == EXIT_OK
    assert plot.read_text().lstrip().startswith('<?xml')


def test_bad_config_and_flags_exit_with_usage_code(tmp_path, run_args):
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({'model': {'flow_steps': 3}}))
    assert main(['train', '--config', str(bad)]) == EXIT_USAGE
    assert main(['train', '--bogus']) == EXIT_USAGE
    assert main(['launch']) == EXIT_USAGE


def test_missing_checkpoint_is_a_data_error(run_args):
    assert main(['eval'] + run_args) == EXIT_USAGE


def test_verify_single_suite(tmp_path, capsys):
    out = tmp_path / 'out'
    assert main(['verify', '--suite', 'initialization', '--out',
                 str(out)]) == EXIT_OK
    assert 'PASS' in capsys.readouterr().out
    results = json.loads((out / 'verify.json').read_text())
    assert [r['name'] for r in results] == ['initialization']
