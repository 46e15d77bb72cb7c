"""Renders one text per time step in three ablation modes.

cgf  fuzzy labels of the target's causal parents     "f0_1, f1_2 ->"
cg   numeric values of the same parents              "23.5, -1.07 ->"
raw  numeric values of every variable at every lag   (the long baseline)

Slots are (variable, lag) pairs ordered by lag, then variable. The value
being predicted never appears in the text.
"""
import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from cgf.config import PRECISION, TAU_MAX
from cgf.errors import EmptyGraph
from cgf.fuzzy import fuzzify, make_label

log = logging.getLogger(__name__)

SEPARATOR = ', '
TERMINATOR = ' ->'


class Mode(enum.Enum):
    CGF = 'cgf'
    CG = 'cg'
    RAW = 'raw'


@dataclass(frozen=True)
class RenderMode:
    mode: Mode
    numeric_precision: int = PRECISION

    def __post_init__(self):
        object.__setattr__(self, 'mode', Mode(self.mode))
        if self.numeric_precision < 1:
            raise ValueError('numeric precision must be >= 1, got {}'.format(self.numeric_precision))


@dataclass(frozen=True)
class PatternRecord:
    t: int
    text: str
    target: float
    antecedent_slots: tuple


@dataclass
class PatternCorpus:
    mode: Mode
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def texts(self):
        return [r.text for r in self.records]

    @property
    def targets(self):
        return np.array([r.target for r in self.records], dtype=np.float64)

    def to_tsv(self, path):
        """One record per line: text TAB target"""
        with open(path, 'w', encoding='utf-8') as f:
            for r in self.records:
                f.write('{}\t{!r}\n'.format(r.text, r.target))


def format_number(value, precision=PRECISION):
    """Positional notation with `precision` significant digits: 0.04567 -> '0.05'"""
    return np.format_float_positional(float(value) + 0.0, precision=precision, unique=True,
                                      fractional=False, trim='-')


def _join(parts):
    return SEPARATOR.join(parts) + TERMINATOR


def graph_slots(graph, target=0):
    slots = sorted(((l.lag, l.source) for l in graph.target_parents(target)))
    if not slots:
        raise EmptyGraph('causal graph has no parents for variable {}'.format(target))
    return [(source, lag) for lag, source in slots]


def raw_slots(num_variables, tau_max=TAU_MAX):
    return [(variable, lag) for lag in range(1, tau_max + 1) for variable in range(num_variables)]


def _check_time(t, slots):
    deepest = max(lag for _, lag in slots)
    if t - deepest < 0:
        raise ValueError('t={} has no history for lag {}'.format(t, deepest))


def _cgf_text(fuzzy, slots, t):
    _check_time(t, slots)
    return _join([make_label(v, int(fuzzy[v].indices[t - lag])) for v, lag in slots])


def _numeric_text(values, slots, t, precision):
    _check_time(t, slots)
    return _join([format_number(values[t - lag, v], precision) for v, lag in slots])


def render_cgf(fuzzy, graph, t, target=0):
    """Fuzzy labels of the target's parents at time t (list of FuzzySeries)"""
    return _cgf_text(fuzzy, graph_slots(graph, target), t)


def render_cg(series, graph, t, precision=PRECISION):
    return _numeric_text(series.values, graph_slots(graph, series.target_index), t, precision)


def render_raw(series, tau_max, t, precision=PRECISION):
    return _numeric_text(series.values, raw_slots(series.num_variables, tau_max), t, precision)


def corpus_slots(mode, graph, num_variables, tau_max, target=0):
    """Slots a corpus renders; an empty graph falls back to the target's lag 1"""
    if Mode(mode) is Mode.RAW:
        return raw_slots(num_variables, tau_max)
    try:
        return graph_slots(graph, target)
    except EmptyGraph:
        log.warning('no causal parents found for variable %d, falling back to its own lag 1', target)
        return [(target, 1)]


def build_corpus(window, mode, graph, lvs=None, scaler=None, tau_max=TAU_MAX):
    """Renders the train and test corpora of one window.

    Arguments:
        window (WindowSplit): the window to render
        mode (RenderMode): ablation mode and numeric precision
        graph (CausalGraph): fitted on the window's train segment
        lvs (list): linguistic variables fitted on the train segment (cgf only)
        scaler (Standardizer): train statistics used for the targets
        tau_max (int): first usable step of the window

    Returns:
        (train PatternCorpus, test PatternCorpus)
    """
    if not isinstance(mode, RenderMode):
        mode = RenderMode(mode)
    series = window.window
    target = series.target_index
    slots = corpus_slots(mode.mode, graph, series.num_variables, tau_max, target)

    if mode.mode is Mode.CGF:
        if lvs is None:
            raise ValueError('cgf rendering needs the fitted linguistic variables')
        fuzzy = fuzzify(series, lvs)

        def render(t):
            return _cgf_text(fuzzy, slots, t)
    else:
        def render(t):
            return _numeric_text(series.values, slots, t, mode.numeric_precision)

    targets = series.target
    if scaler is not None:
        targets = scaler.transform_column(targets, target)

    start = window.bounds[0]
    split = window.train_length
    train = PatternCorpus(mode.mode)
    test = PatternCorpus(mode.mode)
    for t in range(tau_max, len(series)):
        record = PatternRecord(start + t, render(t), float(targets[t]), tuple(slots))
        (train if t < split else test).records.append(record)
    log.debug('window %d %s: %d train / %d test records, %d slots',
              window.window_id, mode.mode.value, len(train), len(test), len(slots))
    return train, test
