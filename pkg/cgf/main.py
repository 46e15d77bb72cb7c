#!/usr/bin/env python3
"""cgf command line: discover, fuzzify, render, train, evaluate, ablate, fetch-vocab.

Exit status is 0 on success, 2 when some configuration failed and the
others were reported, 1 on a hard error.
"""
import argparse
import json
import logging
import os
import sys

import pandas as pd

from cgf import harness
from cgf.causal import pcmci
from cgf.config import GPT2_VOCAB_DIR, MODES, load_config, merge
from cgf.core import Standardizer
from cgf.errors import CGFError
from cgf.fuzzy import fit_partitions, fuzzify, generate_rules, save_partitions
from cgf.textgen import RenderMode, build_corpus
from cgf.tokenizer import count_metrics, fetch_gpt2_vocab, load_vocab

log = logging.getLogger('cgf')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

_NOT_CONFIG = ('command', 'config', 'verbose', 'quiet', 'mode', 'freeze', 'window', 'dest')


def build_parser():
    parser = argparse.ArgumentParser(prog='cgf', description='Causal-graph fuzzy text forecasting')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML or JSON file with any of the options below')
    common.add_argument('--data', help='CSV file with a header row')
    common.add_argument('--target', help='name of the target column')
    common.add_argument('--skip-columns', nargs='*', help='columns to ignore (timestamps, ids)')
    common.add_argument('--generate', choices=['planted', 'iot'], help='use a synthetic fixture instead of --data')
    common.add_argument('--length', type=int, help='fixture length')
    common.add_argument('--tau-max', type=int)
    common.add_argument('--alpha-pc', type=float)
    common.add_argument('--alpha-mci', type=float)
    common.add_argument('--partitions', type=int)
    common.add_argument('--epochs', type=int)
    common.add_argument('--windows', type=int)
    common.add_argument('--window-fraction', type=float, help='window length as a fraction of the series')
    common.add_argument('--overlap', type=float, help='overlap of consecutive windows')
    common.add_argument('--precision', type=int, help='significant digits of rendered numbers')
    common.add_argument('--seed', type=int)
    common.add_argument('--out', help='output directory')
    common.add_argument('--vocab', help='vocab.json')
    common.add_argument('--merges', help='merges.txt')
    common.add_argument('--workers', type=int)
    common.add_argument('--eq1-literal', action='store_true', default=None,
                        help='Chen midpoints sum consequent centers instead of averaging them')
    common.add_argument('--nrmse-mean', action='store_true', default=None,
                        help='root of the mean squared error instead of the sum')
    common.add_argument('--mode', choices=MODES)
    common.add_argument('--freeze', action='store_true', default=None, help='train only pooling and head')
    common.add_argument('--window', type=int, default=0, help='window for single-window commands')

    commands.add_parser('discover', parents=[common], help='PCMCI graph of one window')
    commands.add_parser('fuzzify', parents=[common], help='fit partitions, export labels and target rules')
    commands.add_parser('render', parents=[common], help='render one window as text in one mode')
    commands.add_parser('train', parents=[common], help='train and score one configuration on one window')
    commands.add_parser('evaluate', parents=[common], help='one configuration over every window')
    commands.add_parser('ablate', parents=[common], help='every mode and freezing regime over every window')
    fetch = commands.add_parser('fetch-vocab', help='download the official GPT-2 vocab and merges')
    fetch.add_argument('--dest', default=GPT2_VOCAB_DIR)
    return parser


def setup_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def experiment_config(args):
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    if args.mode is not None:
        flags['modes'] = [args.mode]
    elif args.command in ('render', 'train', 'evaluate'):
        flags['modes'] = ['cgf']
    if args.freeze is not None:
        flags['freeze'] = [True]
    elif args.command in ('train', 'evaluate'):
        flags['freeze'] = [False]
    file_values = load_config(args.config) if args.config else {}
    return merge(file_values, flags)


def _window_state(config, index):
    return harness.prepare_window(harness.select_window(config, index), config)


def discover(config, args):
    window = harness.select_window(config, args.window)
    train = window.train
    standardized = train.with_values(Standardizer(train.values, train.names).transform(train.values))
    graph = pcmci(standardized, config.tau_max, config.alpha_pc, config.alpha_mci)
    os.makedirs(config.out, exist_ok=True)
    with open(os.path.join(config.out, 'graph.json'), 'w', encoding='utf-8') as f:
        f.write(graph.to_json())
    with open(os.path.join(config.out, 'graph.dot'), 'w', encoding='utf-8') as f:
        f.write(graph.to_dot(train.names))
    for link in graph.target_parents(train.target_index):
        print('{}(t-{}) -> {}  stat={:.3f} p={:.2g}'.format(
            train.names[link.source], link.lag, train.target_name, link.statistic, link.p_value))
    return EXIT_OK


def fuzzify_command(config, args):
    window = harness.select_window(config, args.window)
    lvs = fit_partitions(window.train, config.partitions, config.margin)
    labelled = fuzzify(window.window, lvs)
    os.makedirs(config.out, exist_ok=True)
    save_partitions(lvs, os.path.join(config.out, 'partitions.json'))
    pd.DataFrame({name: fs.labels for name, fs in zip(window.window.names, labelled)}) \
        .to_csv(os.path.join(config.out, 'labels.csv'), index=False)
    target = window.train.target_index
    rules = generate_rules(labelled[target].labels[:window.train_length], lvs[target])
    rules.save(os.path.join(config.out, 'rules.json'))
    print('{} linguistic variables, {} rules for {}'.format(len(lvs), len(rules), window.train.target_name))
    return EXIT_OK


def render(config, args):
    state = _window_state(config, args.window)
    vocab = load_vocab(config.vocab, config.merges)
    os.makedirs(config.out, exist_ok=True)
    for mode in config.modes:
        train, test = build_corpus(state.window, RenderMode(mode, config.precision), state.graph, state.lvs,
                                   state.scaler, config.tau_max)
        train.to_tsv(os.path.join(config.out, '{}_train.tsv'.format(mode)))
        test.to_tsv(os.path.join(config.out, '{}_test.tsv'.format(mode)))
        metrics = count_metrics(train, test, vocab)
        with open(os.path.join(config.out, '{}_token_metrics.json'.format(mode)), 'w', encoding='utf-8') as f:
            json.dump(metrics.to_dict(), f, indent=2, sort_keys=True)
        print('{}: {} train / {} test records, {} tokens'.format(mode, len(train), len(test), metrics.total_tokens))
    return EXIT_OK


def train(config, args):
    state = _window_state(config, args.window)
    vocab = load_vocab(config.vocab, config.merges)
    os.makedirs(config.out, exist_ok=True)
    status = EXIT_OK
    for mode, freezing in harness.configurations(config):
        name = harness.configuration_name(mode, freezing)
        seed = harness.derive_seed(config.seed, args.window, name)
        result = harness.run_job(state, mode, freezing, config, vocab, seed,
                                 checkpoint=os.path.join(config.out, '{}_w{}.pt'.format(name, args.window)))
        if result.failure:
            print('{}: failed: {}'.format(name, result.failure))
            status = EXIT_PARTIAL
        else:
            print('{}: nrmse {:.4f} (persistence {:.4f}, chen {:.4f})'.format(
                name, result.nrmse, state.baselines['persistence'], state.baselines['chen']))
    return status


def evaluate(config, args):
    reports = harness.run_experiment(config, progress=sys.stderr.isatty())
    print(harness.summary_table(reports), end='')
    return EXIT_PARTIAL if any(r.failure for r in reports) else EXIT_OK


COMMANDS = {
    'discover': discover,
    'fuzzify': fuzzify_command,
    'render': render,
    'train': train,
    'evaluate': evaluate,
    'ablate': evaluate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        if args.command == 'fetch-vocab':
            vocab_path, merges_path = fetch_gpt2_vocab(args.dest)
            print('{}\n{}'.format(vocab_path, merges_path))
            return EXIT_OK
        config = experiment_config(args)
        return COMMANDS[args.command](config, args)
    except (CGFError, OSError) as e:
        log.error('%s: %s', type(e).__name__, e)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
