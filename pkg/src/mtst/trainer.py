"""Mini-batch AdamW training with linear decay and early stopping on validation loss."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import features as feats
from .metrics import report_from_outputs
from .model import Batch, batch_losses, loss_and_grad, predict_batches
from .tokenizer import encode_batch

log = logging.getLogger(__name__)

FINETUNE_LR = 5e-5  # fine-tuning-scale rate for a pretrained encoder


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 0.01
    lr_decay: str = "linear"
    early_stop_patience: int = 2
    seed: int = 0
    lam: float | None = None  # None: use the model's fusion.lam
    grad_clip_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("epochs, batch_size and early_stop_patience must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.lr_decay not in ("none", "linear"):
            raise ValueError("lr_decay must be 'none' or 'linear'")

    def to_dict(self):
        return asdict(self)


@dataclass
class Featurizer:
    """Turns samples into model batches (token ids, mask, lexical features, targets)."""
    vocab: object
    lexicon: feats.SensitiveLexicon
    n_max: int
    C: int
    len_cap: int = feats.DEFAULT_LEN_CAP

    def __call__(self, samples):
        texts = [s.text for s in samples]
        ids, mask = encode_batch(texts, self.vocab, self.n_max)
        phi = feats.extract_batch(texts, self.lexicon, self.len_cap)
        B = len(samples)
        y = np.zeros((B, self.C))
        has_multi = np.zeros(B, bool)
        z = np.zeros(B, np.int64)
        has_main = np.zeros(B, bool)
        for i, s in enumerate(samples):
            if s.multi_label is not None:
                y[i] = s.multi_label
                has_multi[i] = True
            if s.main_label is not None:
                z[i] = s.main_label
                has_main[i] = True
        return Batch(ids, mask, phi, y, has_multi, z, has_main)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(x) for k, x in params.values.items()},
                   {k: np.zeros_like(x) for k, x in params.values.items()})


def adamw_step(params, state, cfg, lr=None):
    """One AdamW update from ``params.grads``: bias-corrected moments, decoupled decay."""
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.beta1, cfg.beta2
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.values.items():
        g = params.grads[name]
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {name}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        p -= lr * (update + cfg.weight_decay * p)
    return params, state


def clip_grads(params, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in params.grads.values()))
    if total > max_norm:
        for g in params.grads.values():
            g *= max_norm / total
    return total


def _finite_params(params):
    return all(np.isfinite(v).all() for v in params.values.values())


def validation_loss(batch, params, model_cfg, lam):
    if len(batch) == 0:
        return float("nan")
    pred = predict_batches(batch, params, model_cfg)
    return batch_losses(pred, batch, lam)[2]


def evaluate(params, model_cfg, featurizer, samples, threshold=0.5, batch=None):
    """Single eval-mode pass producing a MetricsReport."""
    if not samples or any(s.main_label is None for s in samples):
        raise ValueError("evaluation needs labeled samples")
    batch = featurizer(samples) if batch is None else batch
    pred = predict_batches(batch, params, model_cfg)
    with_multi = model_cfg.fusion.multi_head and bool(batch.has_multi.all())
    return report_from_outputs(batch.z, pred.main_probs, batch.y if with_multi else None,
                               pred.multi_probs, threshold, with_multi=with_multi)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    stop_reason: str | None = None
    best_epoch: int | None = None

    def to_dict(self):
        return {"epochs": self.epochs, "stop_reason": self.stop_reason, "best_epoch": self.best_epoch}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_dict(cls, d):
        return cls(epochs=d["epochs"], stop_reason=d["stop_reason"], best_epoch=d["best_epoch"])


def train(labeled, validation, params, model_cfg, cfg, featurizer, threshold=0.5,
          out_dir=None, resume=False, train_batch=None, val_batch=None):
    """Train on ``labeled`` samples, monitoring loss on ``validation``.

    Returns ``(params, TrainLog)``; params are restored to the epoch with the
    lowest validation loss. With ``out_dir`` set, ``best.npz`` / ``last.npz``
    checkpoints are written, and ``resume=True`` continues from ``last.npz``.
    """
    if not labeled:
        raise TrainingError("empty labeled set")
    lam = model_cfg.fusion.lam if cfg.lam is None else cfg.lam
    data = featurizer(labeled) if train_batch is None else train_batch
    val = featurizer(validation) if val_batch is None and validation else val_batch
    N = len(data)
    steps_per_epoch = math.ceil(N / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    rng = np.random.default_rng(cfg.seed)
    opt = AdamState.zeros_like(params)
    tlog = TrainLog()
    best_loss, best_params, bad = math.inf, None, 0
    start_epoch = 0
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume:
        if out_dir is None or not (out_dir / "last.npz").exists():
            raise TrainingError("nothing to resume from")
        ck = checkpoint.load(out_dir / "last.npz")
        params.load_values(ck["params"])
        opt, rng = ck["optimizer"], ck["rng"]
        st = ck["meta"]["trainer"]
        tlog = TrainLog.from_dict(st["log"])
        start_epoch, best_loss, bad = st["epoch"], st["best_loss"], st["bad"]
        if (out_dir / "best.npz").exists():
            best_params = checkpoint.load(out_dir / "best.npz")["params"]
        if tlog.stop_reason == "early_stopped":
            start_epoch = cfg.epochs

    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(N)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            params.zero_grad()
            _, _, loss, _ = loss_and_grad(data.take(idx), params, model_cfg, "train", rng, lam)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}")
            if cfg.grad_clip_norm:
                clip_grads(params, cfg.grad_clip_norm)
            lr = cfg.lr
            if cfg.lr_decay == "linear":
                lr = cfg.lr * (1.0 - opt.step / total_steps)
            adamw_step(params, opt, cfg, lr)
            losses.append(loss)
        if not _finite_params(params):
            raise TrainingError(f"non-finite parameters after epoch {epoch}")

        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "steps": opt.step,
                 "train_loss_curve": [float(x) for x in losses]}
        if val is not None and len(val):
            vloss = validation_loss(val, params, model_cfg, lam)
            entry["val_loss"] = vloss
            entry["val_metrics"] = evaluate(params, model_cfg, featurizer, validation,
                                            threshold, batch=val).to_dict()
        else:
            vloss = entry["train_loss"]
            entry["val_loss"] = None
        tlog.epochs.append(entry)
        log.info("epoch %d train %.4f val %s", epoch, entry["train_loss"], entry["val_loss"])

        if vloss < best_loss:
            best_loss, best_params, bad = vloss, params.copy(), 0
            tlog.best_epoch = epoch
            if out_dir:
                checkpoint.save(out_dir / "best.npz", model_cfg, params, meta={"epoch": epoch})
        else:
            bad += 1
        stop = bad >= cfg.early_stop_patience and epoch + 1 < cfg.epochs
        if stop:
            tlog.stop_reason = "early_stopped"
        if out_dir:
            checkpoint.save(out_dir / "last.npz", model_cfg, params, opt, rng, meta={"trainer": {
                "epoch": epoch + 1, "best_loss": best_loss, "bad": bad, "log": tlog.to_dict()}})
        if stop:
            break

    if tlog.stop_reason is None:
        tlog.stop_reason = "epochs_exhausted"
    if best_params is not None:
        params.load_values(best_params)
    return params, tlog
