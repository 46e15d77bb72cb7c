"""Series representation, CSV ingestion, the windowing protocol,
standardization and forecast metrics."""
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from cgf.config import TAU_MAX, TEST_FRACTION, WINDOW_FRACTION, WINDOW_OVERLAP, WINDOWS
from cgf.errors import (DegenerateRange, EmptySeries, InfeasibleWindowing, LengthMismatch,
                        MissingTarget, ParseError)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultivariateSeries:
    """T x (n+1) matrix of finite reals with named columns.

    The values array is made read-only so views can be shared between workers.
    """
    values: np.ndarray
    names: tuple
    target_index: int = 0
    dropped_rows: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError('series values must be a 2-d matrix, got shape {}'.format(values.shape))
        if values.shape[1] != len(self.names):
            raise ValueError('{} names for {} columns'.format(len(self.names), values.shape[1]))
        if len(set(self.names)) != len(self.names):
            raise ValueError('variable names must be unique: {}'.format(list(self.names)))
        if not np.all(np.isfinite(values)):
            raise ValueError('series contains NaN or Inf')
        if not 0 <= self.target_index < values.shape[1]:
            raise ValueError('target_index {} out of range'.format(self.target_index))
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'names', tuple(self.names))

    def __len__(self):
        return self.values.shape[0]

    @property
    def num_variables(self):
        return self.values.shape[1]

    @property
    def target(self):
        return self.values[:, self.target_index]

    @property
    def target_name(self):
        return self.names[self.target_index]

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def slice(self, start, end):
        return MultivariateSeries(self.values[start:end], self.names, self.target_index)

    def with_values(self, values):
        return MultivariateSeries(values, self.names, self.target_index)


@dataclass(frozen=True)
class WindowSplit:
    window_id: int
    train: MultivariateSeries
    test: MultivariateSeries
    bounds: tuple

    @property
    def window(self):
        """Train and test joined back together, in time order"""
        return self.train.with_values(np.vstack([self.train.values, self.test.values]))

    @property
    def train_length(self):
        return len(self.train)


@dataclass
class ForecastReport:
    mode: str
    freezing: bool
    per_window_nrmse: list = field(default_factory=list)
    token_metrics: object = None
    baselines: dict = field(default_factory=dict)
    failure: str = None

    @property
    def mean(self):
        if not self.per_window_nrmse:
            return float('nan')
        return float(np.mean(self.per_window_nrmse))

    @property
    def std(self):
        if not self.per_window_nrmse:
            return float('nan')
        return float(np.std(self.per_window_nrmse))

    @property
    def name(self):
        return '{}-{}'.format(self.mode, 'freeze' if self.freezing else 'nofreeze')

    def to_dict(self):
        metrics = self.token_metrics
        if metrics is not None and hasattr(metrics, 'to_dict'):
            metrics = metrics.to_dict()
        return {
            'mode': self.mode,
            'freezing': self.freezing,
            'per_window_nrmse': [float(v) for v in self.per_window_nrmse],
            'mean': None if self.failure else self.mean,
            'std': None if self.failure else self.std,
            'token_metrics': metrics,
            'baselines': {k: [float(v) for v in vs] for k, vs in sorted(self.baselines.items())},
            'failure': self.failure,
        }

    def csv_rows(self):
        """One row per window for the flat CSV report"""
        for i, value in enumerate(self.per_window_nrmse):
            row = {'mode': self.mode, 'freezing': self.freezing, 'window': i, 'nrmse': float(value)}
            for name, values in sorted(self.baselines.items()):
                row['{}_nrmse'.format(name)] = float(values[i]) if i < len(values) else None
            yield row


_LINE_NO = re.compile(r'line (\d+)')


def load_csv(path, target_name, skip_columns=(), tau_max=TAU_MAX):
    """Reads a comma separated UTF-8 file with a header row.

    Rows where any retained column is missing or not a finite number are
    dropped and counted. The target column is moved to index 0.

    Arguments:
        path (string): CSV file
        target_name (string): name of the endogenous column Y0
        skip_columns (list): columns to ignore (timestamps, ids, ...)
        tau_max (int): downstream lag horizon, sets the minimum usable length

    Returns:
        MultivariateSeries with dropped_rows set
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as e:
        match = _LINE_NO.search(str(e))
        raise ParseError('malformed CSV {}'.format(path), row=int(match.group(1)) if match else None) from e
    except pd.errors.EmptyDataError as e:
        raise EmptySeries('{} is empty'.format(path)) from e

    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    if target_name not in columns:
        raise MissingTarget('target {!r} not in header {}'.format(target_name, columns))
    if target_name in skip_columns:
        raise MissingTarget('target {!r} is listed in skip_columns'.format(target_name))
    retained = [c for c in columns if c not in set(skip_columns)]
    retained.remove(target_name)
    retained.insert(0, target_name)

    numeric = pd.DataFrame(index=frame.index)
    for name in retained:
        parsed = pd.to_numeric(frame[name].str.strip(), errors='coerce')
        parsed = parsed.where(np.isfinite(parsed))
        if len(frame) and parsed.isna().all():
            # header row is line 1, first data row is line 2
            raise ParseError('no numeric values', row=2, column=name)
        numeric[name] = parsed

    usable = numeric.notna().all(axis=1)
    dropped = int((~usable).sum())
    if dropped:
        log.warning('%s: dropped %d of %d rows with missing or unparseable values', path, dropped, len(numeric))
    numeric = numeric[usable]

    if len(numeric) < 2 * (tau_max + 1):
        raise EmptySeries('{}: {} usable rows, need at least {}'.format(path, len(numeric), 2 * (tau_max + 1)))
    log.info('loaded %s: T=%d, %d variables, target %r', path, len(numeric), len(retained), target_name)
    return MultivariateSeries(numeric.to_numpy(dtype=np.float64), tuple(retained), 0, dropped)


def make_windows(series, count=WINDOWS, fraction=WINDOW_FRACTION, overlap=WINDOW_OVERLAP,
                 test_fraction=TEST_FRACTION):
    """Cuts `count` overlapping windows of floor(fraction*|D|) samples.

    Window i covers [i*s, i*s + w) with stride s = floor(w*(1-overlap)); the
    last round(test_fraction*w) samples of each window are its test split.
    """
    if not 0 < fraction < 1:
        raise InfeasibleWindowing('fraction must lie in (0, 1), got {}'.format(fraction))
    if not 0 <= overlap < 1:
        raise InfeasibleWindowing('overlap must lie in [0, 1), got {}'.format(overlap))
    if count < 1:
        raise InfeasibleWindowing('need at least one window')

    size = len(series)
    width = int(math.floor(fraction * size))
    stride = int(math.floor(width * (1 - overlap)))
    if width < 2 or (count > 1 and stride < 1):
        raise InfeasibleWindowing('series of length {} too short for windows of fraction {}'.format(size, fraction))
    last_end = (count - 1) * stride + width
    if last_end > size:
        raise InfeasibleWindowing('{} windows of width {} and stride {} need {} samples, series has {}'
                                  .format(count, width, stride, last_end, size))

    test_length = int(math.floor(test_fraction * width + 0.5))
    train_length = width - test_length
    if train_length < 1 or test_length < 1:
        raise InfeasibleWindowing('window of width {} leaves an empty train or test split'.format(width))

    windows = []
    for i in range(count):
        start = i * stride
        end = start + width
        windows.append(WindowSplit(
            window_id=i,
            train=series.slice(start, start + train_length),
            test=series.slice(start + train_length, end),
            bounds=(start, end),
        ))
    return windows


class Standardizer(object):
    """Per-column z-scoring with statistics taken from a train segment only"""

    def __init__(self, train_values, names=None):
        train_values = np.asarray(train_values, dtype=np.float64)
        if train_values.ndim == 1:
            train_values = train_values[:, None]
        if train_values.shape[0] == 0:
            raise EmptySeries('cannot standardize an empty train segment')
        self.mean = train_values.mean(axis=0)
        self.scale = train_values.std(axis=0)
        constant = ~(self.scale > 0)
        for j in np.flatnonzero(constant):
            label = names[j] if names is not None else j
            log.warning('column %s has zero variance in train, passing it through unscaled', label)
        self.mean = np.where(constant, 0.0, self.mean)
        self.scale = np.where(constant, 1.0, self.scale)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.mean

    def transform_column(self, values, j):
        return (np.asarray(values, dtype=np.float64) - self.mean[j]) / self.scale[j]

    def inverse_column(self, values, j):
        return np.asarray(values, dtype=np.float64) * self.scale[j] + self.mean[j]


def standardize(train):
    """Returns (transform, inverse_transform) fitted on `train`.

    `train` may be a MultivariateSeries or a plain array.
    """
    if isinstance(train, MultivariateSeries):
        scaler = Standardizer(train.values, train.names)
    else:
        scaler = Standardizer(train)
    return scaler.transform, scaler.inverse_transform


def nrmse(actual, predicted, mean=False):
    """sqrt(sum((y - yhat)^2)) / (y_max - y_min), range taken from `actual`.

    With mean=True the root is taken over the mean squared error instead.
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise LengthMismatch('{} actual values vs {} predictions'.format(actual.size, predicted.size))
    if actual.size == 0:
        raise LengthMismatch('nrmse needs at least one value')
    spread = actual.max() - actual.min()
    if not spread > 0:
        raise DegenerateRange('test target is constant ({}), NRMSE undefined'.format(actual[0]))
    squared = (actual - predicted) ** 2
    error = np.sqrt(squared.mean() if mean else squared.sum())
    return float(error / spread)


def persistence_baseline(test):
    """Predicts y(t+1) = y(t) on the target column: len(test) - 1 forecasts"""
    target = test.target if isinstance(test, MultivariateSeries) else np.asarray(test, dtype=np.float64)
    if len(target) < 2:
        raise LengthMismatch('persistence needs at least two observations')
    return [float(v) for v in target[:-1]]
