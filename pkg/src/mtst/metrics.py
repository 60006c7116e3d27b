"""Evaluation metrics for the main (single-label) and multi-label tasks."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

MULTI_KEYS = ("precision_macro", "recall_macro", "f1_macro", "mae", "mse", "jaccard_macro")
MAIN_KEYS = ("accuracy", "mcc")


class MetricsError(ValueError):
    pass


def confusion_matrix(true, pred, K):
    cm = np.zeros((K, K), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def mcc(cm):
    """Matthews correlation from a KxK confusion matrix (rows true, cols predicted).

    Uses the multiclass R_K form, which reduces to the binary formula for K=2.
    A zero denominator gives 0.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise MetricsError("confusion matrix must be square and non-empty")
    s = cm.sum()
    if s == 0:
        raise MetricsError("empty confusion matrix")
    c = np.trace(cm)
    t = cm.sum(1)
    p = cm.sum(0)
    num = c * s - t @ p
    den = math.sqrt((s * s - p @ p) * (s * s - t @ t))
    return 0.0 if den == 0 else float(num / den)


def _check_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def jaccard_macro(true_sets, pred_sets):
    t, p = _check_pair(true_sets, pred_sets)
    t, p = t.astype(bool), p.astype(bool)
    if t.shape[0] == 0:
        raise MetricsError("no samples")
    inter = (t & p).sum(-1)
    union = (t | p).sum(-1)
    per = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(per.mean())


def prf_macro(true, pred):
    t, p = _check_pair(true, pred)
    t, p = t.astype(bool), p.astype(bool)
    tp = (t & p).sum(0).astype(float)
    pp = p.sum(0)
    ap = t.sum(0)
    prec = np.divide(tp, pp, out=np.zeros_like(tp), where=pp > 0)
    rec = np.divide(tp, ap, out=np.zeros_like(tp), where=ap > 0)
    s = prec + rec
    f1 = np.divide(2 * prec * rec, s, out=np.zeros_like(tp), where=s > 0)
    return float(prec.mean()), float(rec.mean()), float(f1.mean())


def mae_mse(true, probs):
    t, p = _check_pair(true, probs)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise MetricsError("probabilities outside [0, 1]")
    diff = p.astype(float) - t.astype(float)
    return float(np.abs(diff).mean()), float((diff * diff).mean())


@dataclass
class MetricsReport:
    main: dict
    multi: dict | None
    counts: list
    n_samples: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(main=d["main"], multi=d["multi"], counts=d["counts"], n_samples=d["n_samples"])

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def flat(self):
        """Single-level mapping for CSV rows; absent multi-label metrics are blank."""
        row = {"n_samples": self.n_samples}
        row.update({k: self.main.get(k) for k in MAIN_KEYS})
        for k in MULTI_KEYS:
            row[k] = None if self.multi is None else self.multi.get(k)
        return row


def report_from_outputs(main_true, main_probs, multi_true, multi_probs, threshold=0.5,
                        with_multi=True):
    """Assemble a MetricsReport from labels and head probabilities."""
    main_true = np.asarray(main_true)
    main_probs = np.atleast_2d(main_probs)
    if len(main_true) == 0:
        raise MetricsError("no labeled samples to evaluate")
    K = main_probs.shape[1]
    main_pred = np.argmax(main_probs, axis=1)
    cm = confusion_matrix(main_true, main_pred, K)
    main = {"accuracy": float(np.trace(cm) / cm.sum()), "mcc": mcc(cm)}
    multi = None
    if with_multi and multi_true is not None:
        multi_pred = (np.asarray(multi_probs) >= threshold).astype(np.int64)
        p, r, f = prf_macro(multi_true, multi_pred)
        mae, mse = mae_mse(multi_true, multi_probs)
        multi = {"precision_macro": p, "recall_macro": r, "f1_macro": f, "mae": mae, "mse": mse,
                 "jaccard_macro": jaccard_macro(multi_true, multi_pred)}
    return MetricsReport(main=main, multi=multi, counts=cm.tolist(), n_samples=int(len(main_true)))


def threshold_sweep(multi_true, multi_probs, grid=None):
    """(threshold, precision, recall, f1) rows over a grid of thresholds."""
    grid = np.round(np.arange(0.05, 1.0, 0.05), 2) if grid is None else grid
    rows = []
    for th in grid:
        p, r, f = prf_macro(multi_true, (np.asarray(multi_probs) >= th).astype(int))
        rows.append({"threshold": float(th), "precision": p, "recall": r, "f1": f})
    return rows


def write_csv(path_or_buf, rows, fieldnames=None):
    rows = list(rows)
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        fh = open(path_or_buf, "w", newline="", encoding="utf-8")
        close = True
    else:
        fh = path_or_buf
    try:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})
    finally:
        if close:
            fh.close()


def csv_text(rows, fieldnames=None):
    buf = io.StringIO()
    write_csv(buf, rows, fieldnames)
    return buf.getvalue()
