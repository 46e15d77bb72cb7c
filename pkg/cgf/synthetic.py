"""Linear VAR generators with planted causal graphs, and graph scoring."""
import logging
from dataclasses import dataclass, field

import numpy as np

from cgf.causal import CausalGraph, LaggedLink
from cgf.core import MultivariateSeries
from cgf.errors import InvalidConfig, ShapeMismatch, UnstableSpec

log = logging.getLogger(__name__)


@dataclass
class VarSpec:
    """Linear VAR(lags) with links given as {(source, lag, target): coefficient}"""
    variables: int
    lags: int
    coefficients: dict = field(default_factory=dict)
    noise_scale: object = 1.0
    length: int = 3000
    seed: int = 0
    burn_in: int = 200
    names: list = None

    def lag_matrices(self):
        A = np.zeros((self.lags, self.variables, self.variables))
        for (source, lag, target), coef in self.coefficients.items():
            if not 1 <= lag <= self.lags:
                raise UnstableSpec('link lag {} outside 1..{}'.format(lag, self.lags))
            if not (0 <= source < self.variables and 0 <= target < self.variables):
                raise UnstableSpec('link ({}, {}, {}) references an unknown variable'.format(source, lag, target))
            A[lag - 1, target, source] = coef
        return A


def spectral_radius(spec):
    """Largest eigenvalue modulus of the VAR companion matrix"""
    A = spec.lag_matrices()
    n, p = spec.variables, spec.lags
    companion = np.zeros((n * p, n * p))
    companion[:n, :] = np.hstack(list(A))
    if p > 1:
        companion[n:, :-n] = np.eye(n * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def generate_var(spec, tau_max=None):
    """Draws a stationary VAR series and returns it with its true graph.

    Returns:
        (MultivariateSeries, CausalGraph) where the graph's statistics are the
        planted coefficients and its tau_max is `tau_max` (default spec.lags)
    """
    radius = spectral_radius(spec)
    if radius >= 1.0:
        raise UnstableSpec('companion spectral radius {:.4f} >= 1, the process is not stationary'.format(radius))
    A = spec.lag_matrices()
    n = spec.variables
    rng = np.random.default_rng(spec.seed)
    noise = np.broadcast_to(np.asarray(spec.noise_scale, dtype=np.float64), (n,))
    total = spec.length + spec.burn_in
    x = rng.normal(0.0, 1.0, size=(total, n)) * noise
    for t in range(spec.lags, total):
        for lag in range(1, spec.lags + 1):
            x[t] += A[lag - 1] @ x[t - lag]
    names = spec.names or ['y{}'.format(i) for i in range(n)]
    series = MultivariateSeries(x[spec.burn_in:], tuple(names), 0)

    links = tuple(LaggedLink(s, lag, t, float(c), 0.0) for (s, lag, t), c in spec.coefficients.items() if c != 0)
    truth = CausalGraph(links, tau_max or spec.lags, 0.0, n)
    log.debug('generated VAR(%d): %d variables, %d links, radius %.3f', spec.lags, n, len(links), radius)
    return series, truth


def score_graph(found, truth):
    """Link-level recall and false discovery rate, 0/0 counted as 0"""
    if found.num_variables != truth.num_variables or found.tau_max != truth.tau_max:
        raise ShapeMismatch('found graph ({} variables, tau_max {}) vs truth ({} variables, tau_max {})'.format(
            found.num_variables, found.tau_max, truth.num_variables, truth.tau_max))
    found_edges = found.edges()
    true_edges = truth.edges()
    hits = len(found_edges & true_edges)
    recall = hits / len(true_edges) if true_edges else 0.0
    fdr = (len(found_edges) - hits) / len(found_edges) if found_edges else 0.0
    return {'recall': recall, 'false_discovery_rate': fdr}


def planted_spec(length=3000, seed=0):
    """5-variable VAR(2) with 6 links; y0 is driven by its own past, y1 and y2"""
    return VarSpec(
        variables=5,
        lags=2,
        coefficients={
            (0, 1, 0): 0.5,
            (1, 1, 0): 0.6,
            (2, 2, 0): -0.5,
            (1, 1, 1): 0.7,
            (3, 1, 2): 0.6,
            (4, 2, 3): 0.5,
        },
        noise_scale=[0.3, 1.0, 1.0, 1.0, 1.0],
        length=length,
        seed=seed,
    )


def iot_spec(length=3000, seed=0):
    """14 variables shaped like the household-electricity data: every
    variable is autoregressive and feeds a lower-indexed one, so the graph
    is a tree rooted at y0."""
    coefficients = {}
    for i in range(14):
        coefficients[(i, 1, i)] = 0.6
    for i in range(1, 14):
        coefficients[(i, 1 + i % 2, (i - 1) // 3)] = 0.4 if i % 2 else -0.4
    return VarSpec(variables=14, lags=2, coefficients=coefficients, noise_scale=1.0, length=length, seed=seed)


FIXTURES = {
    'planted': planted_spec,
    'iot': iot_spec,
}


def generate_fixture(name, length=3000, seed=0):
    try:
        factory = FIXTURES[name]
    except KeyError:
        raise InvalidConfig('unknown fixture {!r}, expected one of {}'.format(name, sorted(FIXTURES)))
    return generate_var(factory(length=length, seed=seed))
