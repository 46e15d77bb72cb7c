"""PCMCI causal discovery with a linear partial correlation test.

Nodes are written (variable, lag) with lag >= 1 meaning X^variable_{t-lag}.
"""
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from cgf.config import ALPHA_PC, TAU_MAX
from cgf.errors import InsufficientSamples, RankDeficientConditions

log = logging.getLogger(__name__)

# residual norms below this fraction of the centered input count as zero
_RESIDUAL_TOL = 1e-10
MIN_EFFECTIVE_SAMPLES = 30


@dataclass(frozen=True)
class LaggedLink:
    source: int
    lag: int
    target: int
    statistic: float
    p_value: float

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError('links must be lagged (lag >= 1), got {}'.format(self.lag))
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError('p_value {} is not a probability'.format(self.p_value))

    @property
    def node(self):
        return (self.source, self.lag)

    def to_dict(self):
        return {'source': self.source, 'lag': self.lag, 'target': self.target,
                'statistic': self.statistic, 'p_value': self.p_value}


@dataclass(frozen=True)
class ParentSet:
    target: int
    parents: tuple = ()

    @property
    def nodes(self):
        return [p.node for p in self.parents]

    def __len__(self):
        return len(self.parents)


@dataclass(frozen=True)
class CausalGraph:
    links: tuple
    tau_max: int
    alpha: float
    num_variables: int
    tests_run: int = field(default=0, compare=False)

    def __post_init__(self):
        links = tuple(sorted(self.links, key=lambda l: (l.target, l.lag, l.source)))
        keys = [(l.source, l.lag, l.target) for l in links]
        if len(set(keys)) != len(keys):
            raise ValueError('duplicate links in graph')
        object.__setattr__(self, 'links', links)

    def __len__(self):
        return len(self.links)

    def edges(self):
        return {(l.source, l.lag, l.target) for l in self.links}

    def target_parents(self, target=0):
        """Links into `target`, ordered by (lag, source)"""
        return [l for l in self.links if l.target == target]

    def restrict_to(self, target):
        return CausalGraph(tuple(self.target_parents(target)), self.tau_max, self.alpha,
                           self.num_variables, self.tests_run)

    def to_dict(self):
        return {
            'tau_max': self.tau_max,
            'alpha': self.alpha,
            'num_variables': self.num_variables,
            'links': [l.to_dict() for l in self.links],
        }

    @classmethod
    def from_dict(cls, data):
        links = tuple(LaggedLink(int(d['source']), int(d['lag']), int(d['target']),
                                 float(d['statistic']), float(d['p_value'])) for d in data['links'])
        return cls(links, int(data['tau_max']), float(data['alpha']), int(data['num_variables']))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_dot(self, names=None):
        names = names or ['X{}'.format(i) for i in range(self.num_variables)]
        lines = ['digraph causal {']
        for i, name in enumerate(names):
            lines.append('  {} [label="{}"];'.format(i, name))
        for l in self.links:
            lines.append('  {} -> {} [label="{} (lag {})", penwidth={:.2f}];'.format(
                l.source, l.target, '{:.3f}'.format(l.statistic), l.lag, 1 + 4 * abs(l.statistic)))
        lines.append('}')
        return '\n'.join(lines) + '\n'


def _independent_columns(Z):
    """Drops columns of Z that are collinear with earlier ones (or constant)"""
    centered = Z - Z.mean(axis=0)
    if not np.any(centered):
        return Z[:, []]
    _, R, pivots = linalg.qr(centered, mode='economic', pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > diag[0] * 1e-10 * max(Z.shape)))
    return Z[:, np.sort(pivots[:rank])]


def _residuals(v, Z):
    v = v - v.mean()
    if Z.shape[1] == 0:
        return v
    Zc = Z - Z.mean(axis=0)
    coef, *_ = np.linalg.lstsq(Zc, v, rcond=None)
    return v - Zc @ coef


def parcorr_test(x, y, Z=None):
    """Partial correlation of x and y given the columns of Z.

    Both vectors are residualized on Z by least squares with an intercept;
    the statistic is the Pearson correlation of the residuals and the
    p-value is two-sided from Student's t with N - |Z| - 2 degrees of
    freedom.

    Returns:
        (statistic, p_value)
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if Z is None:
        Z = np.empty((n, 0))
    Z = np.asarray(Z, dtype=np.float64).reshape(n, -1)
    if y.shape[0] != n:
        raise InsufficientSamples('x has {} samples, y has {}'.format(n, y.shape[0]))
    if n < Z.shape[1] + 3:
        raise InsufficientSamples('{} samples for {} conditions'.format(n, Z.shape[1]))

    if Z.shape[1]:
        kept = _independent_columns(Z)
        if kept.shape[1] < Z.shape[1]:
            warnings.warn('conditioning matrix has rank {} < {}, dropped collinear columns'
                          .format(kept.shape[1], Z.shape[1]), RankDeficientConditions)
        Z = kept

    rx = _residuals(x, Z)
    ry = _residuals(y, Z)
    nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
    if nx <= _RESIDUAL_TOL * (np.linalg.norm(x - x.mean()) + 1e-300) or \
            ny <= _RESIDUAL_TOL * (np.linalg.norm(y - y.mean()) + 1e-300):
        return 0.0, 1.0

    r = float(np.clip(np.dot(rx, ry) / (nx * ny), -1.0, 1.0))
    dof = n - Z.shape[1] - 2
    if abs(r) >= 1.0:
        return r, 0.0
    t = r * np.sqrt(dof / (1.0 - r * r))
    return r, float(min(1.0, 2.0 * stats.t.sf(abs(t), dof)))


class _Lagged(object):
    """Aligned lagged columns: rows t in [offset, T)"""

    def __init__(self, X, offset):
        self.X = X
        self.offset = offset
        self.T = X.shape[0]

    @property
    def samples(self):
        return self.T - self.offset

    def column(self, node):
        variable, lag = node
        return self.X[self.offset - lag:self.T - lag, variable]

    def matrix(self, nodes):
        if not nodes:
            return np.empty((self.samples, 0))
        return np.column_stack([self.column(n) for n in nodes])


def _as_matrix(series):
    return np.asarray(getattr(series, 'values', series), dtype=np.float64)


def pc1_condition_selection(series, target, tau_max=TAU_MAX, alpha_pc=ALPHA_PC, counter=None):
    """Iterative PC1 selection of the lagged parents of one variable.

    Iteration 0 tests every (source, lag) unconditionally; iteration q tests
    each surviving parent given the q strongest other survivors. Parents are
    ranked by the smallest |statistic| they reached over all iterations.
    Stops once q exceeds the number of parents minus one or a conditional
    pass removes nothing.
    """
    X = _as_matrix(series)
    T, N = X.shape
    if T - tau_max < MIN_EFFECTIVE_SAMPLES:
        raise InsufficientSamples('{} samples with tau_max={} leaves fewer than {} effective samples'
                                  .format(T, tau_max, MIN_EFFECTIVE_SAMPLES))
    data = _Lagged(X, tau_max)
    y = data.column((target, 0))

    parents = [(i, lag) for lag in range(1, tau_max + 1) for i in range(N)]
    strength = {}
    signed = {}
    p_max = {}
    tests = 0
    q = 0
    while not (q > 0 and q > len(parents) - 1):
        removed = []
        for node in parents:
            conditions = [other for other in parents if other != node][:q]
            stat, pval = parcorr_test(data.column(node), y, data.matrix(conditions))
            tests += 1
            if abs(stat) < strength.get(node, np.inf):
                strength[node] = abs(stat)
                signed[node] = stat
            p_max[node] = max(pval, p_max.get(node, 0.0))
            if pval > alpha_pc:
                removed.append(node)
        for node in removed:
            del strength[node]
        parents = sorted(strength, key=lambda n: (-strength[n], n[0], n[1]))
        log.debug('pc1 target %d, %d conditions: removed %d, %d parents left', target, q, len(removed), len(parents))
        if q >= 1 and not removed:
            break
        q += 1

    if counter is not None:
        counter.append(tests)
    links = tuple(LaggedLink(i, lag, target, float(signed[(i, lag)]), float(p_max[(i, lag)])) for i, lag in parents)
    return ParentSet(target, links)


def mci_step(series, parent_sets, tau_max=TAU_MAX, alpha=ALPHA_PC, targets=None, counter=None):
    """Momentary conditional independence test of every lagged link.

    X^i_{t-tau} -> X^j_t is tested given the parents of X^j_t (minus the
    link itself) and the parents of X^i shifted back by tau. All tests share
    one sample alignment, wide enough for the deepest shifted condition.
    """
    X = _as_matrix(series)
    T, N = X.shape
    if isinstance(parent_sets, dict):
        parent_sets = [parent_sets[j] for j in range(N)]
    deepest = max([lag for ps in parent_sets for _, lag in ps.nodes] or [0])
    data = _Lagged(X, tau_max + deepest)
    if data.samples < 3:
        raise InsufficientSamples('no samples left after aligning {} lags'.format(tau_max + deepest))

    targets = range(N) if targets is None else targets
    links = []
    tests = 0
    for j in targets:
        y = data.column((j, 0))
        conds_y = parent_sets[j].nodes
        for lag in range(1, tau_max + 1):
            for i in range(N):
                conditions = [n for n in conds_y if n != (i, lag)]
                conditions += [(k, lag + k_lag) for k, k_lag in parent_sets[i].nodes
                               if (k, lag + k_lag) not in conditions]
                stat, pval = parcorr_test(data.column((i, lag)), y, data.matrix(conditions))
                tests += 1
                if pval <= alpha:
                    links.append(LaggedLink(i, lag, j, float(stat), float(pval)))
    if counter is not None:
        counter.append(tests)
    return CausalGraph(tuple(links), tau_max, alpha, N, tests)


def pcmci(series, tau_max=TAU_MAX, alpha_pc=ALPHA_PC, alpha_mci=None, target_only=False, target=None):
    """PC1 for every variable, then MCI.

    With target_only the MCI stage only tests links into the target
    (series.target_index, or `target` for plain arrays).
    """
    X = _as_matrix(series)
    if target is None:
        target = getattr(series, 'target_index', 0)
    alpha_mci = alpha_pc if alpha_mci is None else alpha_mci
    counter = []
    parent_sets = [pc1_condition_selection(X, j, tau_max, alpha_pc, counter) for j in range(X.shape[1])]
    graph = mci_step(X, parent_sets, tau_max, alpha_mci, targets=[target] if target_only else None, counter=counter)
    graph = CausalGraph(graph.links, tau_max, alpha_mci, X.shape[1], sum(counter))
    log.info('pcmci: %d variables, tau_max=%d, %d CI tests, %d links (%d into target %d)',
             X.shape[1], tau_max, graph.tests_run, len(graph), len(graph.target_parents(target)), target)
    return graph
