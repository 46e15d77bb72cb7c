"""Attention-pooled sequence regressor trained from scratch.

Token and position embeddings feed a stack of causal self-attention
blocks; a learned query pools the final hidden states into one vector and
an MLP head maps it to the scalar forecast. All parameters are float64.
"""
import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import frogress
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from cgf.config import BATCH_SIZE, EPOCHS, LEARNING_RATE
from cgf.errors import InvalidConfig, NonFiniteParameter, SequenceTooLong
from cgf.textgen import SEPARATOR, TERMINATOR
from cgf.tokenizer import encode

log = logging.getLogger(__name__)

DTYPE = torch.float64
CHECKPOINT_FORMAT = 'cgf-sequence-regressor'
CHECKPOINT_VERSION = 1
PAD_ID = 0


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    num_heads: int = 4
    num_blocks: int = 2
    mlp_hidden: int = 128
    max_sequence_length: int = 256
    seed: int = 0

    def validate(self):
        for name in ('vocab_size', 'embed_dim', 'num_heads', 'mlp_hidden', 'max_sequence_length'):
            if getattr(self, name) < 1:
                raise InvalidConfig('{} must be positive, got {}'.format(name, getattr(self, name)))
        if self.num_blocks < 0:
            raise InvalidConfig('num_blocks must be >= 0')
        if self.embed_dim % self.num_heads:
            raise InvalidConfig('embed_dim {} is not divisible by num_heads {}'.format(self.embed_dim, self.num_heads))
        return self


@dataclass
class TrainConfig:
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    freezing: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig('epochs must be >= 1')
        if self.batch_size < 1:
            raise InvalidConfig('batch_size must be >= 1')


@dataclass
class TrainingTrace:
    initial_loss: float
    epoch_losses: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


class CausalSelfAttention(nn.Module):

    def __init__(self, embed_dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(embed_dim, 3 * embed_dim)
        self.proj = nn.Linear(embed_dim, embed_dim)

    def forward(self, x, return_weights=False):
        B, T, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=2)
        q, k, v = (a.view(B, T, self.num_heads, D // self.num_heads).transpose(1, 2) for a in (q, k, v))
        scores = q @ k.transpose(-2, -1) / math.sqrt(D // self.num_heads)
        future = torch.triu(torch.ones(T, T, dtype=torch.bool, device=x.device), diagonal=1)
        weights = scores.masked_fill(future, float('-inf')).softmax(dim=-1)
        out = self.proj((weights @ v).transpose(1, 2).reshape(B, T, D))
        return (out, weights) if return_weights else out


class Block(nn.Module):

    def __init__(self, embed_dim, num_heads):
        super().__init__()
        self.ln1 = nn.LayerNorm(embed_dim)
        self.attn = CausalSelfAttention(embed_dim, num_heads)
        self.ln2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, 4 * embed_dim),
            nn.GELU(),
            nn.Linear(4 * embed_dim, embed_dim),
        )

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class AttentionPooling(nn.Module):
    """Softmax of a learned query against the hidden states, mask aware"""

    def __init__(self, embed_dim):
        super().__init__()
        self.query = nn.Parameter(torch.zeros(embed_dim))

    def forward(self, h, mask):
        scores = h @ self.query / math.sqrt(h.shape[-1])
        weights = scores.masked_fill(~mask, float('-inf')).softmax(dim=-1)
        return (weights.unsqueeze(-1) * h).sum(dim=1), weights


class SequenceRegressor(nn.Module):

    def __init__(self, config):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.token_embedding = nn.Embedding(config.vocab_size, d)
        self.position_embedding = nn.Embedding(config.max_sequence_length, d)
        self.blocks = nn.ModuleList([Block(d, config.num_heads) for _ in range(config.num_blocks)])
        self.ln_f = nn.LayerNorm(d)
        self.pool = AttentionPooling(d)
        self.head = nn.Sequential(
            nn.Linear(d, config.mlp_hidden),
            nn.GELU(),
            nn.Linear(config.mlp_hidden, 1),
        )

    def backbone_parameters(self):
        for module in (self.token_embedding, self.position_embedding, self.blocks, self.ln_f):
            yield from module.parameters()

    def head_parameters(self):
        yield from self.pool.parameters()
        yield from self.head.parameters()

    def set_freezing(self, freezing):
        """Freezing leaves only the pooling query and the MLP head trainable"""
        for p in self.backbone_parameters():
            p.requires_grad_(not freezing)
        for p in self.head_parameters():
            p.requires_grad_(True)

    def forward(self, ids, mask=None, return_weights=False):
        B, T = ids.shape
        if T > self.config.max_sequence_length:
            raise SequenceTooLong('{} tokens exceed context of {}'.format(T, self.config.max_sequence_length))
        if mask is None:
            mask = torch.ones(B, T, dtype=torch.bool, device=ids.device)
        positions = torch.arange(T, device=ids.device)
        x = self.token_embedding(ids) + self.position_embedding(positions)[None]
        for block in self.blocks:
            x = block(x)
        pooled, weights = self.pool(self.ln_f(x), mask)
        out = self.head(pooled).squeeze(-1)
        return (out, weights) if return_weights else out


def _init_parameters(model, generator):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norms start at identity"""
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.uniform_(-bound, bound, generator=generator)
                module.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(module, nn.Embedding):
                bound = 1.0 / math.sqrt(module.embedding_dim)
                module.weight.uniform_(-bound, bound, generator=generator)
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, AttentionPooling):
                bound = 1.0 / math.sqrt(module.query.numel())
                module.query.uniform_(-bound, bound, generator=generator)


def init_model(config):
    config.validate()
    # module constructors draw from the global generator; keep it untouched
    with torch.random.fork_rng(devices=[]):
        model = SequenceRegressor(config).to(DTYPE)
    generator = torch.Generator().manual_seed(config.seed)
    _init_parameters(model, generator)
    return model


def parameter_count(model, trainable_only=False):
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def trainable_parameter_count(model):
    return parameter_count(model, trainable_only=True)


def parameter_checksum(model, names=None):
    """sha256 over the raw bytes of the named parameters, in name order"""
    digest = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        if names is None or name in names:
            digest.update(name.encode('utf-8'))
            digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _check_finite(named):
    for name, tensor in named:
        if not torch.isfinite(tensor).all():
            raise NonFiniteParameter(name)


def batch_tensors(sequences, vocab_size=None):
    """Right-pads id lists into (ids, mask) tensors"""
    if not sequences or any(len(s) == 0 for s in sequences):
        raise ValueError('every sequence needs at least one token')
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.bool)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = torch.as_tensor(seq, dtype=torch.long)
        mask[row, :len(seq)] = True
    if vocab_size is not None and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError('token ids outside [0, {})'.format(vocab_size))
    return ids, mask


def forward(model, token_ids):
    """Scalar prediction for one id sequence"""
    ids, mask = batch_tensors([list(token_ids)], model.config.vocab_size)
    with torch.no_grad():
        return float(model(ids, mask)[0])


def loss(prediction, target):
    """Mean squared error over the batch"""
    prediction = torch.as_tensor(prediction, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    return F.mse_loss(prediction, target)


def gradients(model, batch):
    """Exact gradients of the mean batch loss.

    Arguments:
        model (SequenceRegressor): the model
        batch (list): (token ids, target) pairs

    Returns:
        OrderedDict name -> gradient; frozen parameters get zeros
    """
    if not batch:
        raise ValueError('gradients need a nonempty batch')
    ids, mask = batch_tensors([b[0] for b in batch], model.config.vocab_size)
    targets = torch.tensor([b[1] for b in batch], dtype=DTYPE)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    value = loss(model(ids, mask), targets)
    grads = torch.autograd.grad(value, [p for _, p in named]) if named else []
    by_name = dict(zip((n for n, _ in named), grads))
    result = OrderedDict()
    for name, p in model.named_parameters():
        result[name] = by_name.get(name, torch.zeros_like(p)).detach()
    _check_finite(result.items())
    return result


def _mean_loss(model, sequences, targets, batch_size):
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            ids, mask = batch_tensors(sequences[start:start + batch_size])
            total += float(loss(model(ids, mask), targets[start:start + batch_size])) * ids.shape[0]
    return total / len(sequences)


def train(model, sequences, targets, config, progress=False):
    """Adam over seeded shuffles of the corpus for config.epochs epochs.

    Arguments:
        model (SequenceRegressor): trained in place
        sequences (list): token id lists, already truncated to the context
        targets (array): standardized targets, one per sequence
        config (TrainConfig): epochs, batch size, learning rate, freezing, seed
        progress (bool): show a frogress bar over epochs

    Returns:
        TrainingTrace with the loss before training and each epoch's mean loss
    """
    if not sequences:
        raise ValueError('cannot train on an empty corpus')
    targets = torch.as_tensor(np.asarray(targets, dtype=np.float64), dtype=DTYPE)
    model.set_freezing(config.freezing)
    params = [p for p in model.parameters() if p.requires_grad]
    log.debug('training %d of %d parameters (freezing=%s)', parameter_count(model, True),
              parameter_count(model), config.freezing)
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    generator = torch.Generator().manual_seed(config.seed)

    trace = TrainingTrace(_mean_loss(model, sequences, targets, config.batch_size))
    epochs = range(config.epochs)
    for epoch in (frogress.bar(epochs) if progress else epochs):
        order = torch.randperm(len(sequences), generator=generator).tolist()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            ids, mask = batch_tensors([sequences[i] for i in index])
            optimizer.zero_grad()
            value = loss(model(ids, mask), targets[index])
            value.backward()
            optimizer.step()
            _check_finite(model.named_parameters())
            total += float(value) * len(index)
        trace.epoch_losses.append(total / len(order))
        log.debug('epoch %d: loss %.6f', epoch + 1, trace.epoch_losses[-1])
    return trace


def predict(model, sequences, inverse_transform=None, batch_size=BATCH_SIZE):
    """Forward every sequence and map the outputs back to original units"""
    outputs = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            ids, mask = batch_tensors(sequences[start:start + batch_size], model.config.vocab_size)
            outputs.append(model(ids, mask).numpy())
    values = np.concatenate(outputs) if outputs else np.empty(0)
    if inverse_transform is not None:
        values = inverse_transform(values)
    return [float(v) for v in values]


def _drop_deep_lags(record, vocab, max_len):
    """Ids of the record with its deepest-lag slots removed until it fits"""
    if not record.text.endswith(TERMINATOR):
        return encode(record.text, vocab)[-max_len:]
    parts = record.text[:-len(TERMINATOR)].split(SEPARATOR)
    slots = record.antecedent_slots
    if len(slots) == len(parts):
        order = sorted(range(len(parts)), key=lambda i: slots[i][1])
    else:
        order = list(range(len(parts)))

    def ids_keeping(k):
        kept = set(order[:k])
        return encode(SEPARATOR.join(p for i, p in enumerate(parts) if i in kept) + TERMINATOR, vocab)

    lo, hi = 1, len(parts)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if len(ids_keeping(mid)) <= max_len:
            lo = mid
        else:
            hi = mid - 1
    ids = ids_keeping(lo)
    return ids if len(ids) <= max_len else ids[-max_len:]


def encode_corpus(corpus, vocab, max_len):
    """Token ids per record. Records longer than `max_len` lose their
    deepest-lag slots first; the most recent lags and the terminator stay.
    """
    sequences = []
    truncated = 0
    for record in corpus.records:
        ids = encode(record.text, vocab)
        if len(ids) > max_len:
            ids = _drop_deep_lags(record, vocab, max_len)
            truncated += 1
        sequences.append(ids)
    if truncated:
        log.warning('%d of %d records longer than %d tokens were truncated to their most recent lags',
                    truncated, len(sequences), max_len)
    return sequences


def save_checkpoint(model, path):
    state = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': asdict(model.config),
        'parameters': OrderedDict((n, p.detach().clone()) for n, p in model.named_parameters()),
    }
    torch.save(state, path)


def load_checkpoint(path):
    state = torch.load(path, weights_only=True)
    if state.get('format') != CHECKPOINT_FORMAT or state.get('version') != CHECKPOINT_VERSION:
        raise InvalidConfig('{} is not a version {} {} checkpoint'.format(path, CHECKPOINT_VERSION, CHECKPOINT_FORMAT))
    model = init_model(ModelConfig(**state['config']))
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(state['parameters'][name])
    return model
