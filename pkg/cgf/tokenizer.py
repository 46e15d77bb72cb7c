"""Byte-level BPE compatible with the GPT-2 vocab.json / merges.txt files,
plus the text size and token accounting of rendered corpora."""
import json
import logging
import os
from dataclasses import asdict, dataclass

import regex
import requests

from cgf.config import GPT2_VOCAB_DIR, MERGES_FILE, VOCAB_FILE
from cgf.errors import MalformedVocab, MergeNotInVocab, UnknownId

log = logging.getLogger(__name__)

GPT2_URLS = {
    VOCAB_FILE: 'https://openaipublic.blob.core.windows.net/gpt-2/encodings/main/encoder.json',
    MERGES_FILE: 'https://openaipublic.blob.core.windows.net/gpt-2/encodings/main/vocab.bpe',
}

# published GPT-2 pre-tokenizer
PRETOKENIZE = regex.compile(r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+""")


def bytes_to_unicode():
    """Maps every byte to a printable unicode character.

    Printable latin-1 bytes map to themselves, the rest are shifted above 255.
    """
    bs = list(range(ord('!'), ord('~') + 1)) + list(range(ord('¡'), ord('¬') + 1)) + \
        list(range(ord('®'), ord('ÿ') + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


BYTE_ENCODER = bytes_to_unicode()
BYTE_DECODER = {v: k for k, v in BYTE_ENCODER.items()}


class BpeVocab(object):

    def __init__(self, token_to_id, merges):
        self.token_to_id = dict(token_to_id)
        self.merges = [tuple(m) for m in merges]
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self.id_to_token = [None] * len(self.token_to_id)
        for token, i in self.token_to_id.items():
            self.id_to_token[i] = token
        self.byte_encoder = BYTE_ENCODER
        self.byte_decoder = BYTE_DECODER
        self._cache = {}

    def __len__(self):
        return len(self.token_to_id)

    def __repr__(self):
        return 'BpeVocab({} tokens, {} merges)'.format(len(self), len(self.merges))

    def bpe(self, word):
        """Applies the lowest-ranked adjacent merge until none applies"""
        if word in self._cache:
            return self._cache[word]
        symbols = list(word)
        while len(symbols) > 1:
            pairs = set(zip(symbols, symbols[1:]))
            best = min(pairs, key=lambda p: self.ranks.get(p, float('inf')))
            if best not in self.ranks:
                break
            first, second = best
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == first and symbols[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        self._cache[word] = symbols
        return symbols


def _read_vocab(vocab_path):
    try:
        with open(vocab_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedVocab('{}: {}'.format(vocab_path, e.msg), line=e.lineno) from e
    if not isinstance(data, dict):
        raise MalformedVocab('{}: expected a JSON object token -> id'.format(vocab_path))
    for token, i in data.items():
        if not isinstance(i, int) or isinstance(i, bool):
            raise MalformedVocab('{}: id of {!r} is not an integer'.format(vocab_path, token))
    ids = sorted(data.values())
    if ids != list(range(len(ids))):
        raise MalformedVocab('{}: ids are not dense in [0, {})'.format(vocab_path, len(ids)))
    missing = [c for c in BYTE_ENCODER.values() if c not in data]
    if missing:
        raise MalformedVocab('{}: {} byte-level tokens missing, e.g. {!r}'.format(vocab_path, len(missing), missing[0]))
    return data


def _read_merges(merges_path, token_to_id):
    merges = []
    with open(merges_path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\n')
            if line_no == 1 and line.startswith('#version'):
                continue
            if not line.strip():
                continue
            parts = line.split(' ')
            if len(parts) != 2 or not all(parts):
                raise MalformedVocab('{}: expected two space separated symbols'.format(merges_path), line=line_no)
            if parts[0] + parts[1] not in token_to_id:
                raise MergeNotInVocab('{}: merge result {!r} not in vocab'.format(merges_path, parts[0] + parts[1]),
                                      line=line_no)
            merges.append((parts[0], parts[1]))
    return merges


def load_vocab(vocab_path, merges_path):
    """Loads and validates a GPT-2 style vocab.json / merges.txt pair"""
    token_to_id = _read_vocab(vocab_path)
    merges = _read_merges(merges_path, token_to_id)
    vocab = BpeVocab(token_to_id, merges)
    log.debug('loaded %r from %s', vocab, os.path.dirname(vocab_path))
    return vocab


def encode(text, vocab):
    ids = []
    for word in PRETOKENIZE.findall(text):
        mapped = ''.join(vocab.byte_encoder[b] for b in word.encode('utf-8'))
        ids.extend(vocab.token_to_id[symbol] for symbol in vocab.bpe(mapped))
    return ids


def decode(ids, vocab):
    tokens = []
    for i in ids:
        if not 0 <= i < len(vocab.id_to_token):
            raise UnknownId('token id {} outside vocab of {}'.format(i, len(vocab)))
        tokens.append(vocab.id_to_token[i])
    data = bytes(vocab.byte_decoder[c] for c in ''.join(tokens))
    return data.decode('utf-8', errors='replace')


@dataclass
class TokenMetrics:
    total_text_size: int = 0
    train_text_size: int = 0
    test_text_size: int = 0
    total_tokens: int = 0
    train_tokens: int = 0
    test_tokens: int = 0
    total_text_bytes: int = 0
    train_text_bytes: int = 0
    test_text_bytes: int = 0

    def to_dict(self):
        return asdict(self)


def _sizes(corpus, vocab):
    chars = size = tokens = 0
    for text in corpus.texts:
        chars += len(text)
        size += len(text.encode('utf-8'))
        tokens += len(encode(text, vocab))
    return chars, size, tokens


def count_metrics(train, test, vocab):
    """Character, byte and token totals per split and overall"""
    train_chars, train_bytes, train_tokens = _sizes(train, vocab)
    test_chars, test_bytes, test_tokens = _sizes(test, vocab)
    return TokenMetrics(
        total_text_size=train_chars + test_chars,
        train_text_size=train_chars,
        test_text_size=test_chars,
        total_tokens=train_tokens + test_tokens,
        train_tokens=train_tokens,
        test_tokens=test_tokens,
        total_text_bytes=train_bytes + test_bytes,
        train_text_bytes=train_bytes,
        test_text_bytes=test_bytes,
    )


def fetch_gpt2_vocab(dest=GPT2_VOCAB_DIR, session=None):
    """Downloads the official GPT-2 vocab and merges into `dest`"""
    os.makedirs(dest, exist_ok=True)
    session = session or requests.Session()
    paths = {}
    for name, url in GPT2_URLS.items():
        response = session.get(url)
        response.raise_for_status()
        path = os.path.join(dest, name)
        with open(path, 'wb') as f:
            f.write(response.content)
        log.info('wrote %s (%d bytes)', path, len(response.content))
        paths[name] = path
    return paths[VOCAB_FILE], paths[MERGES_FILE]
