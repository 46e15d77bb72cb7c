"""Window x configuration ablation runner and its report files.

Each window is fitted once on its train segment (standardizer, fuzzy
partitions, causal graph) and the resulting state is shared by the six
{cgf, cg, raw} x {no freezing, freezing} jobs.
"""
import hashlib
import json
import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import frogress
import numpy as np
import pandas as pd
import torch

from cgf.causal import pcmci
from cgf.core import ForecastReport, Standardizer, load_csv, make_windows, nrmse
from cgf.errors import CGFError, DegenerateRange, InvalidConfig
from cgf.fuzzy import ChenModel, fit_partitions
from cgf.model import (ModelConfig, TrainConfig, encode_corpus, init_model, parameter_checksum, predict,
                       save_checkpoint, train)
from cgf.synthetic import generate_fixture
from cgf.textgen import RenderMode, build_corpus
from cgf.tokenizer import TokenMetrics, count_metrics, load_vocab

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
# keys of ExperimentConfig that do not change results and stay out of report.json
_VOLATILE_KEYS = ('out', 'workers')


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root, *keys):
    """Child seed for a (window, configuration, ...) path under a root seed.

    Each key is folded in with one splitmix64 step: s <- splitmix64(s ^ key).
    String keys enter as the first 8 bytes of their sha256.
    """
    state = root & _MASK64
    for key in keys:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.sha256(key.encode('utf-8')).digest()[:8], 'little')
        state = _splitmix64(state ^ (int(key) & _MASK64))
    return state >> 1


@dataclass
class WindowState:
    window: object
    scaler: Standardizer
    lvs: list
    graph: object
    baselines: dict = field(default_factory=dict)


@dataclass
class JobResult:
    window_id: int
    name: str
    nrmse: float = None
    predictions: list = None
    actual: list = None
    token_metrics: TokenMetrics = None
    epoch_losses: list = None
    checksum: str = None
    failure: str = None


def load_series(config):
    if config.generate:
        series, _ = generate_fixture(config.generate, length=config.length, seed=config.seed)
        return series
    return load_csv(config.data, config.target, config.skip_columns, config.tau_max)


def _baseline(name, actual, predicted, config):
    try:
        return nrmse(actual, predicted, mean=config.nrmse_mean)
    except DegenerateRange as e:
        log.warning('%s baseline undefined: %s', name, e)
        return float('nan')


def prepare_window(window, config):
    """Fits everything a window's jobs share, on the train segment only"""
    train_segment = window.train
    scaler = Standardizer(train_segment.values, train_segment.names)
    standardized = train_segment.with_values(scaler.transform(train_segment.values))
    graph = pcmci(standardized, config.tau_max, config.alpha_pc, config.alpha_mci, target_only=True)
    lvs = fit_partitions(train_segment, config.partitions, config.margin)

    # one-step baselines on the test segment: y(t-1) and the Chen FTS of the target
    full = window.window.target
    split = window.train_length
    actual = full[split:]
    previous = full[split - 1:-1]
    chen = ChenModel(config.partitions, config.margin, config.eq1_literal).fit(train_segment.target)
    baselines = {
        'persistence': _baseline('persistence', actual, previous, config),
        'chen': _baseline('chen', actual, chen.forecast(previous), config),
    }
    log.info('window %d %s: %d target parents, persistence %.4f, chen %.4f', window.window_id,
             window.bounds, len(graph.target_parents(train_segment.target_index)),
             baselines['persistence'], baselines['chen'])
    return WindowState(window, scaler, lvs, graph, baselines)


def select_window(config, index):
    """The index-th window of the configured series"""
    windows = make_windows(load_series(config), config.windows, config.window_fraction, config.overlap)
    if not 0 <= index < len(windows):
        raise InvalidConfig('window {} out of range, {} windows configured'.format(index, len(windows)))
    return windows[index]


def configurations(config):
    return [(mode, freezing) for mode in config.modes for freezing in config.freeze]


def configuration_name(mode, freezing):
    return '{}-{}'.format(mode, 'freeze' if freezing else 'nofreeze')


@dataclass
class FittedJob:
    model: object
    trace: object
    train_corpus: object
    test_corpus: object
    test_ids: list
    metrics: TokenMetrics


def fit_model(state, mode, freezing, config, vocab, seed):
    """Renders the window in `mode` and trains a fresh model on its train records"""
    train_corpus, test_corpus = build_corpus(state.window, RenderMode(mode, config.precision), state.graph,
                                             state.lvs, state.scaler, config.tau_max)
    metrics = count_metrics(train_corpus, test_corpus, vocab)
    train_ids = encode_corpus(train_corpus, vocab, config.max_sequence_length)
    test_ids = encode_corpus(test_corpus, vocab, config.max_sequence_length)

    model = init_model(ModelConfig(
        vocab_size=len(vocab),
        embed_dim=config.embed_dim,
        num_heads=config.num_heads,
        num_blocks=config.num_blocks,
        mlp_hidden=config.mlp_hidden,
        max_sequence_length=config.max_sequence_length,
        seed=seed,
    ))
    trace = train(model, train_ids, train_corpus.targets, TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        freezing=freezing,
        seed=seed,
    ))
    return FittedJob(model, trace, train_corpus, test_corpus, test_ids, metrics)


def run_job(state, mode, freezing, config, vocab, seed, checkpoint=None):
    """Render, train, predict and score one configuration on one window.

    With `checkpoint` set the trained model is also saved to that path.
    """
    window = state.window
    name = configuration_name(mode, freezing)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        job = fit_model(state, mode, freezing, config, vocab, seed)
        if checkpoint is not None:
            save_checkpoint(job.model, checkpoint)
        target = window.train.target_index
        predictions = predict(job.model, job.test_ids, lambda v: state.scaler.inverse_column(v, target))
        actual = [float(v) for v in window.test.target]
        score = nrmse(actual, predictions, mean=config.nrmse_mean)
        log.info('window %d %s: nrmse %.4f, %d tokens, loss %.4f -> %.4f', window.window_id, name, score,
                 job.metrics.total_tokens, job.trace.initial_loss, job.trace.final_loss)
        return JobResult(window.window_id, name, score, predictions, actual, job.metrics,
                         job.trace.epoch_losses, parameter_checksum(job.model))
    except CGFError as e:
        log.error('window %d %s failed: %s', window.window_id, name, e)
        return JobResult(window.window_id, name, failure='{}: {}'.format(type(e).__name__, e))
    finally:
        torch.set_num_threads(threads)


def _add_metrics(a, b):
    return TokenMetrics(**{k: v + getattr(b, k) for k, v in a.to_dict().items()})


def run_experiment(config, progress=False):
    """Runs every configuration over every window and writes the reports.

    Returns:
        list of ForecastReport, one per configuration; a configuration with a
        failed window carries the failure message
    """
    series = load_series(config)
    windows = make_windows(series, config.windows, config.window_fraction, config.overlap)
    vocab = load_vocab(config.vocab, config.merges)
    combos = configurations(config)
    log.info('%d windows x %d configurations on %d samples, %d variables',
             len(windows), len(combos), len(series), series.num_variables)

    states = {}
    failures = {}
    for window in windows:
        try:
            states[window.window_id] = prepare_window(window, config)
        except CGFError as e:
            log.error('window %d could not be fitted: %s', window.window_id, e)
            failures[window.window_id] = '{}: {}'.format(type(e).__name__, e)

    jobs = []
    for window in windows:
        for mode, freezing in combos:
            seed = derive_seed(config.seed, window.window_id, configuration_name(mode, freezing))
            jobs.append((window.window_id, mode, freezing, seed))

    results = {}
    runnable = [j for j in jobs if j[0] in states]
    for window_id, mode, freezing, _ in jobs:
        if window_id in failures:
            results[(window_id, configuration_name(mode, freezing))] = JobResult(
                window_id, configuration_name(mode, freezing), failure=failures[window_id])

    if config.workers > 1:
        # spawned workers start without the parent's torch thread pools
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=multiprocessing.get_context('spawn')) as pool:
            futures = [(j, pool.submit(run_job, states[j[0]], j[1], j[2], config, vocab, j[3])) for j in runnable]
            for job, future in (frogress.bar(futures) if progress else futures):
                result = future.result()
                results[(result.window_id, result.name)] = result
    else:
        for window_id, mode, freezing, seed in (frogress.bar(runnable) if progress else runnable):
            result = run_job(states[window_id], mode, freezing, config, vocab, seed)
            results[(result.window_id, result.name)] = result

    reports = []
    for mode, freezing in combos:
        name = configuration_name(mode, freezing)
        report = ForecastReport(mode, freezing, token_metrics=TokenMetrics())
        report.baselines = {'persistence': [], 'chen': []}
        problems = []
        for window in windows:
            result = results[(window.window_id, name)]
            if result.failure:
                problems.append('window {}: {}'.format(window.window_id, result.failure))
                continue
            report.per_window_nrmse.append(result.nrmse)
            report.token_metrics = _add_metrics(report.token_metrics, result.token_metrics)
            for key, value in states[window.window_id].baselines.items():
                report.baselines[key].append(value)
        if problems:
            report.failure = '; '.join(problems)
        reports.append(report)

    write_reports(reports, results, states, windows, config)
    return reports


def _snapshot(config):
    data = config.to_dict()
    for key in _VOLATILE_KEYS:
        data.pop(key, None)
    return data


def _dump_json(data, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def summary_table(reports):
    """Plain-text tables: NRMSE mean ± std, then text size and token totals"""
    lines = ['{:<6} {:>20} {:>20}'.format('mode', 'no freezing', 'freezing')]
    for mode in sorted({r.mode for r in reports}, key=['cgf', 'cg', 'raw'].index):
        cells = []
        for freezing in (False, True):
            match = [r for r in reports if r.mode == mode and r.freezing == freezing]
            if not match:
                cells.append('-')
            elif match[0].failure:
                cells.append('failed')
            else:
                cells.append('{:.3f} ± {:.3f}'.format(match[0].mean, match[0].std))
        lines.append('{:<6} {:>20} {:>20}'.format(mode, *cells))
    lines.append('')
    metrics = {}
    for r in reports:
        metrics.setdefault(r.mode, r.token_metrics)
    modes = sorted(metrics, key=['cgf', 'cg', 'raw'].index)
    lines.append('{:<18}'.format('metric') + ''.join('{:>16}'.format(m) for m in modes))
    for key in TokenMetrics().to_dict():
        lines.append('{:<18}'.format(key) + ''.join('{:>16,}'.format(getattr(metrics[m], key)) for m in modes))
    return '\n'.join(lines) + '\n'


def write_reports(reports, results, states, windows, config):
    """report.json, report.csv and summary.txt at the top of the output
    directory, plus one reproducibility directory per configuration"""
    out = config.out
    os.makedirs(out, exist_ok=True)

    _dump_json({'config': _snapshot(config), 'reports': [r.to_dict() for r in reports]},
               os.path.join(out, 'report.json'))
    rows = [row for r in reports for row in r.csv_rows()]
    pd.DataFrame(rows, columns=['mode', 'freezing', 'window', 'nrmse', 'chen_nrmse', 'persistence_nrmse']) \
        .to_csv(os.path.join(out, 'report.csv'), index=False)
    with open(os.path.join(out, 'summary.txt'), 'w', encoding='utf-8') as f:
        f.write(summary_table(reports))

    for report in reports:
        run_dir = os.path.join(out, report.name)
        os.makedirs(run_dir, exist_ok=True)
        seeds = {w.window_id: derive_seed(config.seed, w.window_id, report.name) for w in windows}
        _dump_json({'config': _snapshot(config), 'root_seed': config.seed,
                    'window_seeds': {str(k): v for k, v in seeds.items()}},
                   os.path.join(run_dir, 'run.json'))
        _dump_json(report.token_metrics.to_dict(), os.path.join(run_dir, 'token_metrics.json'))
        for window in windows:
            result = results[(window.window_id, report.name)]
            state = states.get(window.window_id)
            if state is not None:
                with open(os.path.join(run_dir, 'graph_w{}.json'.format(window.window_id)), 'w', encoding='utf-8') as f:
                    f.write(state.graph.to_json())
                with open(os.path.join(run_dir, 'graph_w{}.dot'.format(window.window_id)), 'w', encoding='utf-8') as f:
                    f.write(state.graph.to_dot(window.train.names))
            if result.failure:
                continue
            start = window.bounds[0] + window.train_length
            pd.DataFrame({
                't': np.arange(start, start + len(result.actual)),
                'actual': result.actual,
                'predicted': result.predictions,
            }).to_csv(os.path.join(run_dir, 'predictions_w{}.csv'.format(window.window_id)), index=False)
            _dump_json({'epoch_losses': result.epoch_losses, 'parameter_checksum': result.checksum},
                       os.path.join(run_dir, 'training_w{}.json'.format(window.window_id)))
    log.info('reports written to %s', out)
