"""Handcrafted lexical features fused with the sentence embedding."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import regex

# Emoji property minus ASCII: the property also covers 0-9, '#' and '*'.
_EMOJI = regex.compile(r"[\p{Emoji}--[\x00-\x7F]]", flags=regex.V1)

DEFAULT_LEN_CAP = 280
N_BASE = 3  # emoji freq, punctuation freq, normalized length


def _fold(text):
    return unicodedata.normalize("NFC", text).casefold()


@dataclass(frozen=True)
class SensitiveLexicon:
    groups: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self):
        names = [g for g, _ in self.groups]
        if len(set(names)) != len(names):
            raise ValueError("lexicon group names must be unique")
        normed = []
        for name, terms in self.groups:
            terms = tuple(_fold(t) for t in terms)
            if any(not t for t in terms):
                raise ValueError(f"empty term in group {name!r}")
            normed.append((name, terms))
        object.__setattr__(self, "groups", tuple(normed))

    @classmethod
    def from_dict(cls, mapping):
        return cls(tuple((name, tuple(terms)) for name, terms in mapping.items()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        return {name: list(terms) for name, terms in self.groups}

    @property
    def names(self):
        return [g for g, _ in self.groups]

    def __len__(self):
        return len(self.groups)


# Tiny placeholder; real deployments pass their own lexicon file.
DEFAULT_LEXICON = SensitiveLexicon.from_dict({"insult": ["idiot", "stupid", "loser", "废物", "傻"]})


def width(lexicon):
    return N_BASE + len(lexicon)


def extract(text, lexicon=DEFAULT_LEXICON, len_cap=DEFAULT_LEN_CAP):
    out = np.zeros(width(lexicon))
    n = len(text)
    if n == 0:
        return out
    n_emoji = len(_EMOJI.findall(text))
    n_punct = sum(unicodedata.category(ch).startswith("P") for ch in text)
    out[0] = n_emoji / n
    out[1] = n_punct / n
    out[2] = min(n, len_cap) / len_cap
    folded = _fold(text)
    for g, (_, terms) in enumerate(lexicon.groups):
        out[N_BASE + g] = float(any(t in folded for t in terms))
    return out


def extract_batch(texts, lexicon=DEFAULT_LEXICON, len_cap=DEFAULT_LEN_CAP):
    if not texts:
        return np.zeros((0, width(lexicon)))
    return np.stack([extract(t, lexicon, len_cap) for t in texts])
