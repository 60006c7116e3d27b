"""TF-IDF + logistic regression baseline (softmax main head, one-vs-rest multi-label)."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import regex
import scipy.sparse as sp

from .encoder import ModelParams
from .metrics import report_from_outputs
from .model import sigmoid, softmax
from .trainer import AdamState, TrainConfig, adamw_step

# CJK ideographs become single-codepoint terms; everything else splits on non-word chars
_TERM = regex.compile(r"\p{Han}|[^\W\p{Han}]+")


def word_tokenize(text):
    return _TERM.findall(text.lower())


@dataclass
class TfidfModel:
    vocabulary: dict
    idf: np.ndarray
    norm: str = "l2"
    tokenizer: object = word_tokenize

    def counts(self, texts):
        rows, cols, vals = [], [], []
        for r, text in enumerate(texts):
            for term, c in Counter(self.tokenizer(text)).items():
                j = self.vocabulary.get(term)
                if j is not None:  # unseen terms are ignored
                    rows.append(r)
                    cols.append(j)
                    vals.append(c)
        return sp.csr_matrix((np.asarray(vals, float), (rows, cols)),
                             shape=(len(texts), len(self.vocabulary)))

    def transform(self, texts):
        X = self.counts(texts) @ sp.diags(self.idf)
        if self.norm == "l2":
            n = np.sqrt(np.asarray(X.multiply(X).sum(1)).ravel())
            X = sp.diags(np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)) @ X
        return sp.csr_matrix(X)


def fit_tfidf(corpus, tokenizer=word_tokenize, norm="l2"):
    """Smoothed idf: ln((1 + N) / (1 + df)) + 1, raw term counts."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    df = Counter()
    for text in corpus:
        df.update(set(tokenizer(text)))
    terms = sorted(df)
    vocab = {t: i for i, t in enumerate(terms)}
    N = len(corpus)
    idf = np.array([math.log((1 + N) / (1 + df[t])) + 1.0 for t in terms])
    return TfidfModel(vocab, idf, norm, tokenizer)


@dataclass
class LinearClassifier:
    task: str              # "main_softmax" or "multi_ovr"
    W: np.ndarray
    b: np.ndarray
    constant: dict         # multi_ovr column -> fixed probability for single-class columns

    def predict_proba(self, X):
        logits = X @ self.W + self.b
        if self.task == "main_softmax":
            return softmax(logits)
        p = sigmoid(logits)
        for k, v in self.constant.items():
            p[:, k] = v
        return p


def train_lr(X, labels, task, reg=1e-4, seed=0, steps=300, lr=0.1, n_classes=None):
    """L2-regularised maximum likelihood by full-batch AdamW (linear decay).

    ``labels`` are class indices for ``main_softmax`` and an (N, C) binary
    matrix for ``multi_ovr``. Biases are not regularised. ``seed`` only sets
    the (tiny) weight initialisation.
    """
    X = sp.csr_matrix(X)
    N, V = X.shape
    if N == 0:
        raise ValueError("no training data")
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    constant = {}
    if task == "main_softmax":
        K = n_classes or int(labels.max()) + 1
        Y = np.eye(K)[labels]
    elif task == "multi_ovr":
        Y = labels.astype(float)
        K = Y.shape[1]
        for k in range(K):
            prior = Y[:, k].mean()
            if prior in (0.0, 1.0):
                constant[k] = float(prior)
    else:
        raise ValueError(f"unknown task {task!r}")

    params = ModelParams({"W": rng.normal(0.0, 1e-3, (V, K)), "b": np.zeros(K)})
    cfg = TrainConfig(lr=lr, weight_decay=0.0)
    opt = AdamState.zeros_like(params)
    XT = X.T.tocsr()
    for step in range(steps):
        logits = X @ params["W"] + params["b"]
        P = softmax(logits) if task == "main_softmax" else sigmoid(logits)
        dlogits = (P - Y) / N
        params.grads["W"][...] = XT @ dlogits + reg * params["W"]
        params.grads["b"][...] = dlogits.sum(0)
        for k in constant:
            params.grads["W"][:, k] = 0.0
            params.grads["b"][k] = 0.0
        adamw_step(params, opt, cfg, lr * (1.0 - step / steps))
    W, b = params["W"].copy(), params["b"].copy()
    for k in constant:
        W[:, k] = 0.0
    return LinearClassifier(task, W, b, constant)


@dataclass
class Baseline:
    tfidf: TfidfModel
    main: LinearClassifier | None
    multi: LinearClassifier | None

    def predict(self, texts):
        X = self.tfidf.transform(texts)
        return (None if self.multi is None else self.multi.predict_proba(X),
                None if self.main is None else self.main.predict_proba(X))


def fit_baseline(samples, K, reg=1e-4, seed=0, steps=300, lr=0.1):
    """Fit TF-IDF on the training texts only, then both classifiers."""
    texts = [s.text for s in samples]
    tfidf = fit_tfidf(texts)
    X = tfidf.transform(texts)
    main_idx = [i for i, s in enumerate(samples) if s.main_label is not None]
    multi_idx = [i for i, s in enumerate(samples) if s.multi_label is not None]
    main = multi = None
    if main_idx:
        main = train_lr(X[main_idx], [samples[i].main_label for i in main_idx], "main_softmax",
                        reg, seed, steps, lr, n_classes=K)
    if multi_idx:
        multi = train_lr(X[multi_idx], [samples[i].multi_label for i in multi_idx], "multi_ovr",
                         reg, seed, steps, lr)
    return Baseline(tfidf, main, multi)


def evaluate_baseline(model, samples, threshold=0.5):
    multi_p, main_p = model.predict([s.text for s in samples])
    multi_true = np.array([s.multi_label for s in samples]) if model.multi is not None else None
    return report_from_outputs([s.main_label for s in samples], main_p, multi_true, multi_p,
                               threshold, with_multi=multi_true is not None)
