import json
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from cgf.errors import InvalidConfig

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
RESOURCES = os.path.join(PROJECT_ROOT, 'resources')
VOCAB_DIR = os.path.join(RESOURCES, 'vocab')
TINY_VOCAB_DIR = os.path.join(VOCAB_DIR, 'tiny')
GPT2_VOCAB_DIR = os.path.join(VOCAB_DIR, 'gpt2')
RUNS_DIR = os.path.join(PROJECT_ROOT, 'runs')

VOCAB_FILE = 'vocab.json'
MERGES_FILE = 'merges.txt'

TAU_MAX = 20
ALPHA_PC = 0.1
PARTITIONS = 30
MARGIN_FRACTION = 0.1
EPOCHS = 20
WINDOWS = 10
WINDOW_FRACTION = 0.3
# 10 windows at 30% overlap fit only while fraction <= 1 / (1 + 9 * 0.7)
RUN_WINDOW_FRACTION = 0.1
WINDOW_OVERLAP = 0.3
TEST_FRACTION = 0.2
PRECISION = 3
BATCH_SIZE = 32
LEARNING_RATE = 1e-3

MODES = ('cgf', 'cg', 'raw')


@dataclass
class ExperimentConfig:
    """Every knob of a run. Mirrors the CLI flags one to one."""
    data: str = None
    target: str = None
    skip_columns: list = field(default_factory=list)
    generate: str = None
    length: int = 7000
    modes: list = field(default_factory=lambda: list(MODES))
    freeze: list = field(default_factory=lambda: [False, True])
    tau_max: int = TAU_MAX
    alpha_pc: float = ALPHA_PC
    alpha_mci: float = None
    partitions: int = PARTITIONS
    margin: float = MARGIN_FRACTION
    epochs: int = EPOCHS
    windows: int = WINDOWS
    window_fraction: float = RUN_WINDOW_FRACTION
    overlap: float = WINDOW_OVERLAP
    precision: int = PRECISION
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    embed_dim: int = 128
    num_heads: int = 4
    num_blocks: int = 2
    mlp_hidden: int = 128
    max_sequence_length: int = 256
    seed: int = 0
    out: str = RUNS_DIR
    vocab: str = os.path.join(TINY_VOCAB_DIR, VOCAB_FILE)
    merges: str = os.path.join(TINY_VOCAB_DIR, MERGES_FILE)
    eq1_literal: bool = False
    nrmse_mean: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.alpha_mci is None:
            self.alpha_mci = self.alpha_pc
        for mode in self.modes:
            if mode not in MODES:
                raise InvalidConfig('unknown mode {!r}, expected one of {}'.format(mode, MODES))
        if self.tau_max < 1:
            raise InvalidConfig('tau_max must be >= 1')
        if self.partitions < 2:
            raise InvalidConfig('partitions must be >= 2')
        if self.epochs < 1:
            raise InvalidConfig('epochs must be >= 1')
        if self.data is None and self.generate is None:
            raise InvalidConfig('either data (a CSV path) or generate (a fixture name) is required')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


def load_config(path):
    """Reads a YAML or JSON config file into a plain dict.

    Keys may use dashes as on the command line ("tau-max") or underscores.
    """
    with open(path, 'r', encoding='utf-8') as f:
        if path.endswith('.json'):
            raw = json.load(f)
        else:
            raw = yaml.safe_load(f)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise InvalidConfig('{}: config file must hold a mapping'.format(path))
    values = {k.replace('-', '_'): v for k, v in raw.items()}
    unknown = sorted(set(values) - set(ExperimentConfig.keys()))
    if unknown:
        raise InvalidConfig('{}: unknown config keys {}'.format(path, unknown))
    return values


def merge(file_values, flag_values):
    """Defaults < config file < explicitly given flags (None means not given)."""
    values = dict(file_values or {})
    for k, v in (flag_values or {}).items():
        if v is not None:
            values[k] = v
    return ExperimentConfig(**values)
