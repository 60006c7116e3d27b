"""Byte-level BPE tokenizer producing padded, masked id sequences."""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOCAB_VERSION = 1
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
PAD, UNK, CLS, SEP = range(4)
N_BYTES = 256
BYTE_OFFSET = len(SPECIALS)

# chunks keep their leading whitespace so that joining them restores the text
_CHUNK = re.compile(r"\s*\S+|\s+")


class TokenizerError(ValueError):
    pass


@dataclass
class Vocabulary:
    merges: list[tuple[int, int]]
    seed: int = 0
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _bytes: list = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.merges = [tuple(int(x) for x in m) for m in self.merges]
        table = [b""] * BYTE_OFFSET + [bytes([b]) for b in range(N_BYTES)]
        ranks = {}
        for r, (a, b) in enumerate(self.merges):
            if not (0 <= a < len(table) and 0 <= b < len(table)) or a < BYTE_OFFSET or b < BYTE_OFFSET:
                raise TokenizerError(f"merge {r} refers to an unknown token")
            ranks[(a, b)] = r
            table.append(table[a] + table[b])
        self._ranks = ranks
        self._bytes = table

    @property
    def specials(self):
        return dict(zip(SPECIALS, range(len(SPECIALS))))

    @property
    def size(self):
        return len(self._bytes)

    def __len__(self):
        return self.size

    def token_bytes(self, i):
        return self._bytes[i]

    def _encode_chunk(self, chunk):
        cached = self._cache.get(chunk)
        if cached is not None:
            return cached
        ids = [b + BYTE_OFFSET for b in chunk]
        ranks = self._ranks
        while len(ids) > 1:
            best, best_rank = None, None
            for pair in zip(ids, ids[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            new_id = BYTE_OFFSET + N_BYTES + best_rank
            out, i = [], 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == best[0] and ids[i + 1] == best[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        if len(self._cache) < 200_000:
            self._cache[chunk] = ids
        return ids

    def tokenize(self, text):
        """Subword ids for ``text`` without specials."""
        ids = []
        for chunk in _CHUNK.findall(text):
            ids.extend(self._encode_chunk(chunk.encode("utf-8")))
        return ids

    def to_json(self):
        return {
            "version": VOCAB_VERSION,
            "specials": self.specials,
            "seed": self.seed,
            "tokens": [SPECIALS[i] if i < BYTE_OFFSET else self._bytes[i].hex()
                       for i in range(self.size)],
            "merges": [list(m) for m in self.merges],
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("version") != VOCAB_VERSION:
            raise TokenizerError(f"unsupported vocabulary version {obj.get('version')}")
        if obj.get("specials") != dict(zip(SPECIALS, range(len(SPECIALS)))):
            raise TokenizerError("special token ids do not match")
        vocab = cls(merges=obj["merges"], seed=obj.get("seed", 0))
        expected = vocab.to_json()["tokens"]
        if obj.get("tokens", expected) != expected:
            raise TokenizerError("token table inconsistent with merges")
        return vocab

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def train_vocab(corpus, target_size=8192, seed=0, min_frequency=2):
    """Learn byte-pair merges until ``target_size`` tokens or no pair repeats.

    Pair counts are updated incrementally; ties go to the smallest pair of ids,
    so the result depends only on the corpus (``seed`` is recorded, not used).
    """
    corpus = list(corpus)
    if not corpus:
        raise TokenizerError("empty corpus")
    floor = BYTE_OFFSET + N_BYTES
    if target_size <= floor:
        raise TokenizerError(f"target_size must exceed {floor} (bytes + specials)")

    word_freq = defaultdict(int)
    for text in corpus:
        for chunk in _CHUNK.findall(text):
            word_freq[chunk.encode("utf-8")] += 1
    words = [[b + BYTE_OFFSET for b in w] for w in word_freq]
    freqs = list(word_freq.values())

    pair_counts = defaultdict(int)
    where = defaultdict(set)
    for wi, w in enumerate(words):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    def bump(p, delta):
        c = pair_counts.get(p, 0) + delta
        if c > 0:
            pair_counts[p] = c
            heapq.heappush(heap, (-c, p))
        else:
            pair_counts.pop(p, None)

    merges = []
    while floor + len(merges) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair) != -neg:
            continue  # stale entry
        if -neg < min_frequency:
            break
        new_id = floor + len(merges)
        merges.append(pair)
        for wi in sorted(where.pop(pair, ())):
            w, f = words[wi], freqs[wi]
            if len(w) < 2:
                continue
            out, i = [], 0
            while i < len(w):
                if i + 1 < len(w) and w[i] == pair[0] and w[i + 1] == pair[1]:
                    out.append(new_id)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            if len(out) == len(w):
                continue
            delta = Counter(zip(out, out[1:]))
            delta.subtract(zip(w, w[1:]))
            for p, d in delta.items():
                if d:
                    bump(p, d * f)
                    if d > 0:
                        where[p].add(wi)
            words[wi] = out
        pair_counts.pop(pair, None)
    return Vocabulary(merges=merges, seed=seed)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    attention_mask: np.ndarray
    true_length: int


def encode(text, vocab, n_max=128):
    if n_max < 3:
        raise TokenizerError("n_max must be at least 3")
    body = vocab.tokenize(text)[: n_max - 2]
    n = len(body) + 2
    ids = np.full(n_max, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1:n - 1] = body
    ids[n - 1] = SEP
    mask = np.zeros(n_max, dtype=np.int64)
    mask[:n] = 1
    return TokenSequence(ids=ids, attention_mask=mask, true_length=n)


def encode_batch(texts, vocab, n_max=128):
    """Stack encodings into ``(ids, mask)`` arrays of shape (B, n_max)."""
    seqs = [encode(t, vocab, n_max) for t in texts]
    ids = np.stack([s.ids for s in seqs]) if seqs else np.zeros((0, n_max), np.int64)
    mask = np.stack([s.attention_mask for s in seqs]) if seqs else np.zeros((0, n_max), np.int64)
    return ids, mask


def decode(seq, vocab, errors="strict"):
    """Inverse of ``encode`` up to truncation; specials are dropped.

    With ``errors="replace"``, out-of-range ids decode as [UNK] (U+FFFD)
    instead of raising.
    """
    ids = seq.ids if isinstance(seq, TokenSequence) else np.asarray(seq)
    out = bytearray()
    for i in ids.tolist():
        if not 0 <= i < vocab.size:
            if errors == "strict":
                raise TokenizerError(f"corrupt sequence: id {i} outside vocabulary of {vocab.size}")
            out += "�".encode()
        elif i == UNK:
            out += "�".encode()
        elif i >= BYTE_OFFSET:
            out += vocab.token_bytes(i)
    return out.decode("utf-8", errors="replace")
