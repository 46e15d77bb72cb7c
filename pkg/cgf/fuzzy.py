"""Grid partitioning, triangular membership and a first-order Chen FTS.

Labels follow the pattern "f{variable}_{set}", both indices zero based.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np

from cgf.config import MARGIN_FRACTION, PARTITIONS
from cgf.errors import DegenerateUniverse, EmptyRuleBase

log = logging.getLogger(__name__)


def make_label(variable, index):
    return 'f{}_{}'.format(variable, index)


def parse_label(label):
    """'f3_12' -> (3, 12)"""
    variable, index = label[1:].split('_')
    return int(variable), int(index)


@dataclass(frozen=True)
class FuzzySet:
    label: str
    center: float
    left: float
    right: float


def membership(x, fset):
    """Triangular membership of x in fset, 0 outside [left, right]"""
    if x < fset.left or x > fset.right:
        return 0.0
    if x == fset.center:
        return 1.0
    if x < fset.center:
        return (x - fset.left) / (fset.center - fset.left)
    return (fset.right - x) / (fset.right - fset.center)


class LinguisticVariable(object):
    """K ordered, overlapping triangular sets over a universe of discourse"""

    def __init__(self, variable_index, sets, universe):
        if len(sets) < 2:
            raise DegenerateUniverse('a linguistic variable needs at least 2 sets')
        self.variable_index = variable_index
        self.sets = tuple(sets)
        self.universe = (float(universe[0]), float(universe[1]))
        self.centers = np.array([s.center for s in self.sets])
        self.lefts = np.array([s.left for s in self.sets])
        self.rights = np.array([s.right for s in self.sets])
        self._by_label = {s.label: i for i, s in enumerate(self.sets)}

    def __repr__(self):
        return 'LinguisticVariable(f{}, K={}, universe={})'.format(self.variable_index, len(self), self.universe)

    def __len__(self):
        return len(self.sets)

    @property
    def labels(self):
        return [s.label for s in self.sets]

    def index_of(self, label):
        return self._by_label[label]

    def center_of(self, label):
        return float(self.centers[self._by_label[label]])

    def memberships(self, values):
        """len(values) x K membership matrix.

        Values outside the universe clamp to the nearest boundary set with
        membership 1.
        """
        x = np.atleast_1d(np.asarray(values, dtype=np.float64))[:, None]
        c, l, r = self.centers[None, :], self.lefts[None, :], self.rights[None, :]
        rising = c > l
        falling = r > c
        with np.errstate(divide='ignore', invalid='ignore'):
            up = np.where(rising, (x - l) / np.where(rising, c - l, 1.0), np.where(x >= c, 1.0, 0.0))
            down = np.where(falling, (r - x) / np.where(falling, r - c, 1.0), np.where(x <= c, 1.0, 0.0))
        m = np.clip(np.where(x <= c, up, down), 0.0, 1.0)

        below = x[:, 0] < self.centers[0]
        above = x[:, 0] > self.centers[-1]
        m[below] = 0.0
        m[below, 0] = 1.0
        m[above] = 0.0
        m[above, -1] = 1.0
        return m

    def to_dict(self):
        return {
            'variable_index': self.variable_index,
            'universe': list(self.universe),
            'sets': [{'label': s.label, 'center': s.center, 'left': s.left, 'right': s.right} for s in self.sets],
        }

    @classmethod
    def from_dict(cls, data):
        sets = [FuzzySet(d['label'], float(d['center']), float(d['left']), float(d['right'])) for d in data['sets']]
        return cls(int(data['variable_index']), sets, data['universe'])


def grid_partition(values, K=PARTITIONS, margin_fraction=MARGIN_FRACTION, variable_index=0):
    """Equally spaced triangular sets over [min - m, max + m].

    Interior set i spans (c[i-1], c[i+1]); the first and last sets are
    half-triangles clamped at the universe bounds.
    """
    values = np.asarray(values, dtype=np.float64)
    if K < 2:
        raise DegenerateUniverse('K must be >= 2, got {}'.format(K))
    lo, hi = float(values.min()), float(values.max())
    if not hi > lo:
        raise DegenerateUniverse('variable {} is constant ({}), no universe to partition'.format(variable_index, lo))
    margin = margin_fraction * (hi - lo)
    centers = np.linspace(lo - margin, hi + margin, K)
    sets = []
    for i in range(K):
        left = centers[i - 1] if i > 0 else centers[i]
        right = centers[i + 1] if i < K - 1 else centers[i]
        sets.append(FuzzySet(make_label(variable_index, i), float(centers[i]), float(left), float(right)))
    return LinguisticVariable(variable_index, sets, (centers[0], centers[-1]))


def fit_partitions(train, K=PARTITIONS, margin_fraction=MARGIN_FRACTION):
    """One linguistic variable per column of a (train) MultivariateSeries"""
    return [grid_partition(train.values[:, j], K, margin_fraction, variable_index=j)
            for j in range(train.num_variables)]


@dataclass(frozen=True)
class FuzzySeries:
    variable_index: int
    memberships: np.ndarray
    indices: np.ndarray

    @property
    def labels(self):
        return [make_label(self.variable_index, int(i)) for i in self.indices]

    def label_at(self, t):
        return make_label(self.variable_index, int(self.indices[t]))


def fuzzify_values(values, lv):
    m = lv.memberships(values)
    # argmax keeps the first maximum, so ties go to the lower set
    return FuzzySeries(lv.variable_index, m, np.argmax(m, axis=1))


def fuzzify(series, lvs):
    if len(lvs) != series.num_variables:
        raise ValueError('{} linguistic variables for {} columns'.format(len(lvs), series.num_variables))
    return [fuzzify_values(series.values[:, j], lv) for j, lv in enumerate(lvs)]


def _label_key(label):
    return parse_label(label)


class RuleBase(object):
    """First-order transitions antecedent -> {consequents}, kept sorted"""

    def __init__(self, rules=None):
        self.rules = {}
        for antecedent, consequents in sorted((rules or {}).items(), key=lambda kv: _label_key(kv[0])):
            self.rules[antecedent] = tuple(sorted(set(consequents), key=_label_key))

    def __len__(self):
        return len(self.rules)

    def __contains__(self, label):
        return label in self.rules

    def __getitem__(self, label):
        return self.rules[label]

    def __eq__(self, other):
        return isinstance(other, RuleBase) and self.rules == other.rules

    def items(self):
        return self.rules.items()

    def to_dict(self):
        return {k: list(v) for k, v in self.rules.items()}

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)


def generate_rules(labels, lv=None):
    """Collects consecutive (label(t-1), label(t)) transitions.

    If a linguistic variable is given, every label must belong to it.
    """
    labels = list(labels)
    if lv is not None:
        unknown = sorted(set(labels) - set(lv.labels))
        if unknown:
            raise KeyError('labels not in {!r}: {}'.format(lv, unknown))
    rules = {}
    for antecedent, consequent in zip(labels, labels[1:]):
        rules.setdefault(antecedent, set()).add(consequent)
    return RuleBase(rules)


def chen_forecast(y_t, lv, rules, literal_sum=False):
    """Defuzzified one-step forecast from y(t).

    Each rule whose antecedent has positive membership contributes its
    midpoint (mean of consequent centers, or their sum when literal_sum is
    set) weighted by that membership. With no active rule the center of
    the argmax set is returned.
    """
    if len(rules) == 0:
        raise EmptyRuleBase('rule base is empty, fit on at least two observations')
    mu = lv.memberships([y_t])[0]
    weights = 0.0
    total = 0.0
    for i in np.flatnonzero(mu > 0):
        label = lv.sets[i].label
        if label not in rules:
            continue
        centers = [lv.center_of(c) for c in rules[label]]
        midpoint = float(np.sum(centers)) if literal_sum else float(np.mean(centers))
        weights += mu[i]
        total += mu[i] * midpoint
    if weights == 0.0:
        return float(lv.centers[int(np.argmax(mu))])
    return float(total / weights)


class ChenModel(object):
    """Univariate first-order Chen FTS, fitted on train values"""

    def __init__(self, K=PARTITIONS, margin_fraction=MARGIN_FRACTION, literal_sum=False):
        self.K = K
        self.margin_fraction = margin_fraction
        self.literal_sum = literal_sum
        self.lv = None
        self.rules = None

    def fit(self, values):
        self.lv = grid_partition(values, self.K, self.margin_fraction)
        self.rules = generate_rules(fuzzify_values(values, self.lv).labels)
        log.debug('chen model: %d sets, %d rules', self.K, len(self.rules))
        return self

    def forecast(self, values):
        """Forecast of y(t+1) for every y(t) in values"""
        return [chen_forecast(v, self.lv, self.rules, self.literal_sum) for v in values]


def save_partitions(lvs, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump([lv.to_dict() for lv in lvs], f, indent=2)


def load_partitions(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [LinguisticVariable.from_dict(d) for d in json.load(f)]
