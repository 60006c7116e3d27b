"""Corpus loading, cleaning, label normalization, validation and synthetic splits."""

from __future__ import annotations

import csv
import json
import math
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GOLD = "gold"
PSEUDO = "pseudo"

EMPTY = ""  # marker returned by clean_text for texts with no content left

_ASCII_PUNCT = set(string.punctuation)
_FULLWIDTH_PUNCT = {
    cp: chr(cp - 0xFEE0)
    for cp in range(0xFF01, 0xFF5F)
    if chr(cp - 0xFEE0) in _ASCII_PUNCT
}


class DataError(ValueError):
    pass


class UnknownLabelError(DataError):
    def __init__(self, label):
        super().__init__(f"unknown label: {label!r}")
        self.label = label


class RejectBudgetExceeded(DataError):
    def __init__(self, report):
        super().__init__(
            f"{report['rejected']} of {report['total']} rows rejected: {report['reasons']}"
        )
        self.report = report


@dataclass(frozen=True)
class LabelSchema:
    multi_labels: tuple[str, ...]
    main_labels: tuple[str, ...] = ("hate", "offensive", "normal")

    def __post_init__(self):
        object.__setattr__(self, "multi_labels", tuple(self.multi_labels))
        object.__setattr__(self, "main_labels", tuple(self.main_labels))
        if len(self.multi_labels) < 1:
            raise DataError("need at least one multi-label category")
        if len(self.main_labels) < 2:
            raise DataError("need at least two main categories")
        for names in (self.multi_labels, self.main_labels):
            if len(set(names)) != len(names):
                raise DataError(f"duplicate label names in {names}")

    @property
    def C(self):
        return len(self.multi_labels)

    @property
    def K(self):
        return len(self.main_labels)

    def multi_vector(self, names):
        index = {n: i for i, n in enumerate(self.multi_labels)}
        vec = [0] * self.C
        for name in names:
            if name not in index:
                raise UnknownLabelError(name)
            vec[index[name]] = 1
        return tuple(vec)

    def to_dict(self):
        return {"multi_labels": list(self.multi_labels), "main_labels": list(self.main_labels)}


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    lang: str = "und"
    multi_label: tuple[int, ...] | None = None
    main_label: int | None = None
    provenance: str = GOLD

    @property
    def has_labels(self):
        return self.multi_label is not None or self.main_label is not None

    def to_json(self, schema: LabelSchema | None = None):
        row = {"id": self.id, "text": self.text, "lang": self.lang}
        if self.multi_label is not None:
            if schema is None:
                row["multi_label"] = list(self.multi_label)
            else:
                row["labels"] = [n for n, v in zip(schema.multi_labels, self.multi_label) if v]
        if self.main_label is not None:
            row["main_label"] = (
                self.main_label if schema is None else schema.main_labels[self.main_label]
            )
        if self.provenance != GOLD:
            row["provenance"] = self.provenance
        return row


@dataclass
class DatasetSplit:
    labeled: list[Sample]
    unlabeled: list[Sample]
    validation: list[Sample]
    test: list[Sample]
    # gold labels of the unlabeled pool, kept aside for measuring pseudo-label quality
    hidden: dict[str, tuple[tuple[int, ...] | None, int | None]] = field(default_factory=dict)

    def check_disjoint(self):
        seen = {}
        for part in ("labeled", "unlabeled", "validation", "test"):
            for s in getattr(self, part):
                if s.id in seen:
                    raise DataError(f"id {s.id!r} in both {seen[s.id]} and {part}")
                seen[s.id] = part
        for s in self.unlabeled:
            if s.has_labels:
                raise DataError(f"unlabeled sample {s.id!r} carries labels")


@dataclass(frozen=True)
class MappingRules:
    aliases: dict = field(default_factory=lambda: {
        "hatespeech": "hate",
        "hate_speech": "hate",
        "hateful": "hate",
        "offense": "offensive",
        "abusive": "offensive",
        "neutral": "normal",
        "none": "normal",
        "non-hate": "normal",
    })
    severity: tuple[str, ...] = ("hate", "offensive", "normal")


@dataclass(frozen=True)
class FieldMap:
    id: str = "id"
    text: str = "text"
    lang: str = "lang"
    labels: str = "labels"
    main_label: str = "main_label"
    label_sep: str = "|"  # for CSV cells holding several category names


def clean_text(raw):
    """Normalize a raw text; returns ``EMPTY`` when nothing is left."""
    if raw is None:
        return EMPTY
    text = unicodedata.normalize("NFC", str(raw))
    out = []
    for ch in text:
        if ch in "\t\n\r\v\f":
            out.append(" ")
        elif unicodedata.category(ch) == "Cc":
            continue
        else:
            out.append(_FULLWIDTH_PUNCT.get(ord(ch), ch))
    return " ".join("".join(out).split())


def map_main_label(raw_annotations, rules=None, schema=None):
    """Majority vote over annotator labels; ties go to the more severe label."""
    rules = rules or MappingRules()
    schema = schema or LabelSchema(multi_labels=("any",))
    if not raw_annotations:
        raise DataError("no annotations")
    votes = Counter()
    for raw in raw_annotations:
        key = str(raw).strip().lower()
        key = rules.aliases.get(key, key)
        if key not in schema.main_labels:
            raise UnknownLabelError(raw)
        votes[key] += 1
    top = max(votes.values())
    tied = [k for k, v in votes.items() if v == top]
    rank = {name: i for i, name in enumerate(rules.severity)}
    winner = min(tied, key=lambda k: (rank.get(k, len(rank)), schema.main_labels.index(k)))
    return schema.main_labels.index(winner)


def validate(sample, schema):
    """Return the list of invariant violations (empty means ok)."""
    problems = []
    if not sample.text or not sample.text.strip():
        problems.append("empty text")
    if sample.multi_label is not None:
        if len(sample.multi_label) != schema.C:
            problems.append("multi_label length")
        if any(v not in (0, 1) for v in sample.multi_label):
            problems.append("multi_label values")
    if sample.main_label is not None:
        if not isinstance(sample.main_label, (int, np.integer)) or not 0 <= sample.main_label < schema.K:
            problems.append("main_label index")
    if sample.provenance not in (GOLD, PSEUDO):
        problems.append("provenance")
    if sample.provenance == PSEUDO and not sample.has_labels:
        problems.append("pseudo unlabeled")
    return problems


def _row_to_sample(row, n, field_map, schema, rules):
    text = clean_text(row.get(field_map.text))
    if text == EMPTY:
        raise DataError("empty text")
    sid = row.get(field_map.id)
    sid = f"row-{n}" if sid in (None, "") else str(sid)
    lang = row.get(field_map.lang) or "und"

    multi = None
    raw_labels = row.get(field_map.labels)
    if raw_labels not in (None, ""):
        if isinstance(raw_labels, str):
            raw_labels = [x for x in raw_labels.split(field_map.label_sep) if x.strip()]
        multi = schema.multi_vector([str(x).strip() for x in raw_labels])

    main = None
    raw_main = row.get(field_map.main_label)
    if raw_main not in (None, ""):
        if isinstance(raw_main, int) and not isinstance(raw_main, bool):
            main = raw_main
        else:
            annotations = raw_main if isinstance(raw_main, list) else [raw_main]
            main = map_main_label(annotations, rules, schema)

    sample = Sample(id=sid, text=text, lang=str(lang), multi_label=multi, main_label=main,
                    provenance=row.get("provenance", GOLD))
    problems = validate(sample, schema)
    if problems:
        raise DataError(problems[0])
    return sample


def _reason(exc):
    if isinstance(exc, UnknownLabelError):
        return "unknown label"
    if isinstance(exc, json.JSONDecodeError):
        return "unparseable row"
    return str(exc)


def load_dataset(path, format=None, field_map=None, schema=None, rules=None, reject_budget=0.01):
    """Read a JSONL or CSV corpus.

    Returns ``(samples, report)``; the report counts rejected rows by reason.
    Raises ``RejectBudgetExceeded`` when more than ``ceil(budget * total)`` rows
    are rejected, or when an id repeats.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    field_map = field_map or FieldMap()
    if schema is None:
        raise DataError("a LabelSchema is required")

    samples, reasons, total = [], Counter(), 0
    seen_ids = set()
    with open(path, encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            rows = ((i, line) for i, line in enumerate(fh) if line.strip())
        elif fmt == "csv":
            rows = enumerate(csv.DictReader(fh))
        else:
            raise DataError(f"unknown format {fmt!r}")
        for n, raw in rows:
            total += 1
            try:
                row = json.loads(raw) if fmt == "jsonl" else raw
                if not isinstance(row, dict):
                    raise DataError("row is not an object")
                sample = _row_to_sample(row, n, field_map, schema, rules)
                if sample.id in seen_ids:
                    raise DataError("duplicate id")
            except (DataError, json.JSONDecodeError, TypeError) as exc:
                reasons[_reason(exc)] += 1
                continue
            seen_ids.add(sample.id)
            samples.append(sample)

    report = {
        "total": total,
        "accepted": len(samples),
        "rejected": total - len(samples),
        "reasons": dict(sorted(reasons.items())),
    }
    if report["rejected"] > math.ceil(reject_budget * total):
        raise RejectBudgetExceeded(report)
    return samples, report


def write_jsonl(path, samples, schema=None):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(schema), ensure_ascii=False) + "\n")


# --- synthetic corpus -------------------------------------------------------

_EN_ONSETS = "b c d f g h j k l m n p r s t v w z".split()
_EN_VOWELS = "a e i o u".split()
_CJK_START = 0x4E00


@dataclass
class SynthConfig:
    n_samples: int = 2000
    categories: tuple[str, ...] = ("race", "religion", "gender")
    category_prior: float = 0.3
    markers_per_category: int = 4
    filler_vocab: int = 200
    min_len: int = 6
    max_len: int = 14
    langs: tuple[str, ...] = ("en", "zh")
    labeled_fraction: float = 0.5
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def schema(self):
        return LabelSchema(multi_labels=tuple(self.categories))


def _en_words(rng, n, taken):
    words = []
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(rng.choice(_EN_ONSETS) + rng.choice(_EN_VOWELS) for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zh_words(chars, n, width):
    return ["".join(chars[i * width:(i + 1) * width]) for i in range(n)]


def _lexicons(cfg, rng):
    """Disjoint filler and marker vocabularies for each language."""
    C, m = len(cfg.categories), cfg.markers_per_category
    taken = set()
    en_fill = _en_words(rng, cfg.filler_vocab, taken)
    en_mark = [_en_words(rng, m, taken) for _ in range(C)]
    # filler and marker characters come from disjoint CJK ranges
    n_fill_chars = max(cfg.filler_vocab // 2, 8)
    fill_chars = [chr(_CJK_START + i) for i in rng.permutation(2000)[:n_fill_chars]]
    mark_chars = [chr(_CJK_START + 3000 + i) for i in range(2 * m * C)]
    zh_fill = ["".join(rng.choice(fill_chars, size=rng.integers(1, 3))) for _ in range(cfg.filler_vocab)]
    zh_mark = [_zh_words(mark_chars[2 * m * k:2 * m * (k + 1)], m, 2) for k in range(C)]
    return {"en": (en_fill, en_mark, " "), "zh": (zh_fill, zh_mark, "")}


def synth_main_label(multi, schema):
    """Planted rule: no category -> normal, one -> offensive, two or more -> hate."""
    n = sum(multi)
    name = "normal" if n == 0 else ("offensive" if n == 1 else "hate")
    return schema.main_labels.index(name)


def generate_synthetic(config, seed):
    """Deterministic bilingual corpus whose labels are planted via marker tokens."""
    cfg = config
    if not 0 < cfg.labeled_fraction <= 1:
        raise DataError("labeled_fraction must be in (0, 1]")
    if cfg.val_fraction + cfg.test_fraction >= 1:
        raise DataError("validation + test fractions leave no training pool")
    rng = np.random.default_rng(seed)
    schema = cfg.schema()
    lex = _lexicons(cfg, np.random.default_rng([seed, 1]))

    samples = []
    for i in range(cfg.n_samples):
        lang = cfg.langs[i % len(cfg.langs)] if len(cfg.langs) > 1 else cfg.langs[0]
        fill, marks, sep = lex[lang]
        multi = tuple(int(v) for v in rng.random(len(cfg.categories)) < cfg.category_prior)
        n_fill = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        words = list(rng.choice(fill, size=n_fill))
        for k, on in enumerate(multi):
            if on:
                pos = int(rng.integers(0, len(words) + 1))
                words.insert(pos, marks[k][int(rng.integers(len(marks[k])))])
        samples.append(Sample(id=f"s{seed}-{i:05d}", text=sep.join(words), lang=lang,
                              multi_label=multi, main_label=synth_main_label(multi, schema)))

    order = rng.permutation(len(samples))
    n_val = int(round(cfg.val_fraction * len(samples)))
    n_test = int(round(cfg.test_fraction * len(samples)))
    val = [samples[j] for j in order[:n_val]]
    test = [samples[j] for j in order[n_val:n_val + n_test]]
    pool = [samples[j] for j in order[n_val + n_test:]]
    n_lab = int(round(cfg.labeled_fraction * len(pool)))
    labeled = pool[:n_lab]
    unlabeled, hidden = [], {}
    for s in pool[n_lab:]:
        hidden[s.id] = (s.multi_label, s.main_label)
        unlabeled.append(Sample(id=s.id, text=s.text, lang=s.lang))
    split = DatasetSplit(labeled, unlabeled, val, test, hidden)
    split.check_disjoint()
    return split
