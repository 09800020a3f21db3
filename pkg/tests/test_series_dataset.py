import numpy as np
import pytest

from motionflow.dataset.series_dataset import (SeriesDataset,
                                               chronological_splits,
                                               load_csv_series,
                                               stack_windows,
                                               window_sequences,
                                               write_csv_series)
from motionflow.utils.errors import DataError


def _csv(tmp_path, text, name='series.csv'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_small_series(tmp_path):
    series = load_csv_series(_csv(tmp_path, 'a,b\n1,2\n3,4\n5,6\n7,8\n9,10\n'))
    assert series.values.shape == (5, 2)
    assert series.columns == ['a', 'b']
    assert series.num_entities == 2
    assert series.grouped().shape == (5, 2, 1)
    assert series.grouped(series.values[:3]).shape == (3, 2, 1)


def test_header_only_file(tmp_path):
    with pytest.raises(DataError, match='no data rows'):
        load_csv_series(_csv(tmp_path, 'a,b\n'))


def test_write_then_load_preserves_values(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=(6, 3)) * 1e3
    path = str(tmp_path / 'out.csv')
    write_csv_series(path, values, ['x', 'y', 'z'])
    loaded = load_csv_series(path)
    assert np.allclose(loaded.values, values, rtol=1e-12, atol=0)


def test_ragged_row_names_row(tmp_path):
    with pytest.raises(DataError, match='row 3'):
        load_csv_series(_csv(tmp_path, 'a,b\n1,2\n3\n'))


def test_non_numeric_cell_names_row_and_column(tmp_path):
    with pytest.raises(DataError, match='row 2, column 2'):
        load_csv_series(_csv(tmp_path, 'a,b\n1,oops\n'))
    with pytest.raises(DataError, match='row 3, column 1'):
        load_csv_series(_csv(tmp_path, 'a,b\n1,2\nnan,2\n', 'nan.csv'))


def test_grouping_must_divide_columns():
    with pytest.raises(DataError):
        SeriesDataset(np.zeros((4, 3)), ['a', 'b', 'c'], features_per_entity=2)


@pytest.mark.parametrize('length,stride,count', [(5, 1, 1), (6, 1, 2),
                                                 (10, 3, 2), (11, 3, 3)])
def test_window_counts(length, stride, count):
    series = np.arange(length, dtype=np.float64)[:, None]
    windows = window_sequences(series, 2, 3, stride)
    assert len(windows) == count == (length - 5) // stride + 1


def test_window_starts_follow_stride():
    assert len(window_sequences(np.zeros((35, 2)), 10, 25, 10)) == 1
    series = np.arange(45, dtype=np.float64)[:, None]
    windows = window_sequences(series, 10, 25, 10)
    assert [x[0, 0] for x, _ in windows] == [0.0, 10.0]
    assert all(x.shape == (10, 1) and y.shape == (25, 1) for x, y in windows)


def test_windows_are_slices():
    series = np.arange(40, dtype=np.float64).reshape(20, 2)
    windows = window_sequences(series, 3, 2, 4)
    for k, (x, y) in enumerate(windows):
        start = 4 * k
        assert np.array_equal(x, series[start:start + 3])
        assert np.array_equal(y, series[start + 3:start + 5])


def test_window_errors():
    with pytest.raises(DataError):
        window_sequences(np.zeros((4, 1)), 2, 3, 1)
    with pytest.raises(DataError):
        window_sequences(np.zeros((9, 1)), 2, 3, 0)


def test_stacked_windows_and_chronological_splits():
    series = np.arange(20, dtype=np.float64)[:, None, None]
    stacked = stack_windows(window_sequences(series, 6, 2, 5))
    assert stacked.shape == (3, 8, 1, 1)
    assert stacked[2, 0, 0, 0] == 10
    assert np.array_equal(stacked[1, :, 0, 0], np.arange(5.0, 13.0))
    segments = chronological_splits(series, 0.5, 0.25)
    assert [len(s) for s in segments.values()] == [10, 5, 5]
    assert segments['val'][0, 0, 0] == 10


def test_cells_with_spaces_parse(tmp_path):
    series = load_csv_series(_csv(tmp_path, 'a, b\n 1 ,2\n3, 4.5\n'))
    assert series.columns == ['a', 'b']
    assert np.array_equal(series.values, [[1.0, 2.0], [3.0, 4.5]])


def test_extra_cell_and_empty_file(tmp_path):
    with pytest.raises(DataError, match='row 3'):
        load_csv_series(_csv(tmp_path, 'a,b\n1,2\n3,4,5\n'))
    with pytest.raises(DataError, match='empty'):
        load_csv_series(_csv(tmp_path, '', 'empty.csv'))
    with pytest.raises(DataError, match='cannot read'):
        load_csv_series(str(tmp_path / 'missing.csv'))
