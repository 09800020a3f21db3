import pytest

from motionflow.training.verification import (SUITES, autoregressive_leak,
                                              run_verification)


def test_autoregressive_suite_reports_no_leak():
    assert autoregressive_leak(grids=((2, 3), (3, 3))) == 0.0


def test_run_selected_suites():
    results = run_verification(['initialization', 'autoregressive'])
    assert [r.name for r in results] == ['initialization', 'autoregressive']
    for result in results:
        assert result.passed, result
        assert result.value <= result.threshold
        assert result.seconds >= 0


def test_suite_names():
    assert set(SUITES) == {
        'bijectivity-f64', 'bijectivity-f32', 'logdet', 'autoregressive',
        'gradient', 'initialization'
    }
    with pytest.raises(ValueError, match='nope'):
        run_verification(['nope'])
