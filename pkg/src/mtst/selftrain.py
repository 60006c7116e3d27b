"""Iterative pseudo-labeling with a decaying confidence threshold."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import PSEUDO, DatasetSplit, Sample
from .model import DEFAULT_THRESHOLD, init_model, predict_batches
from .trainer import TrainLog, evaluate, train

log = logging.getLogger(__name__)

RULES = ("main_confidence", "joint_confidence")


@dataclass(frozen=True)
class SelfTrainConfig:
    tau_init: float = 0.9
    tau_min: float = 0.85
    alpha: float = 0.02
    iterations: int = 3
    acceptance_rule: str = "main_confidence"
    remove_accepted: bool = True
    from_scratch: bool = False  # retrain from a fresh init each iteration
    pseudo_threshold: float = DEFAULT_THRESHOLD  # binarizes pseudo multi-labels

    def __post_init__(self):
        if self.tau_min > self.tau_init:
            raise ValueError("tau_min must not exceed tau_init")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.acceptance_rule not in RULES:
            raise ValueError(f"acceptance_rule must be one of {RULES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class PseudoLabelBatch:
    iteration: int
    tau_used: float
    accepted: list = field(default_factory=list)  # (id, multi_label, main_label, confidence)

    def __len__(self):
        return len(self.accepted)

    def to_jsonl(self):
        return "".join(
            json.dumps({"id": sid, "multi_label": list(multi), "main_label": main,
                        "confidence": conf, "tau_used": self.tau_used}) + "\n"
            for sid, multi, main, conf in self.accepted)


def tau_schedule(cfg):
    """Threshold used at each iteration; decay is applied after each selection."""
    taus, tau = [], cfg.tau_init
    for _ in range(cfg.iterations):
        taus.append(tau)
        tau = max(cfg.tau_min, tau - cfg.alpha)
    return taus


def select_pseudo(ids, multi_probs, main_probs, tau, rule="main_confidence",
                  iteration=0, threshold=DEFAULT_THRESHOLD):
    """Accept samples whose confidence strictly exceeds ``tau``.

    main_confidence: confidence = max main probability.
    joint_confidence: confidence = min(max main prob, min_k max(p_k, 1 - p_k)).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    multi_probs = np.atleast_2d(multi_probs)
    main_probs = np.atleast_2d(main_probs)
    conf = main_probs.max(1)
    if rule == "joint_confidence":
        label_conf = np.maximum(multi_probs, 1.0 - multi_probs).min(1)
        conf = np.minimum(conf, label_conf)
    main = np.argmax(main_probs, 1)
    multi = (multi_probs >= threshold).astype(int)
    batch = PseudoLabelBatch(iteration=iteration, tau_used=float(tau))
    for i in np.flatnonzero(conf > tau):
        batch.accepted.append((ids[i], tuple(int(v) for v in multi[i]), int(main[i]), float(conf[i])))
    return batch


@dataclass
class SelfTrainResult:
    params: object
    batches: list
    logs: list          # TrainLog per stage; logs[0] is the initial model
    split: DatasetSplit
    sizes: list         # (|D_L|, |D_U|) before selection at each iteration, then final
    stage_reports: list = field(default_factory=list)


def self_train(split, params, model_cfg, train_cfg, st_cfg, featurizer, out_dir=None,
               eval_samples=None, threshold=DEFAULT_THRESHOLD, init_seed=0):
    """Initial training on the labeled pool, then pseudo-label/retrain iterations.

    ``eval_samples`` (e.g. the test set) is scored after every stage for the
    per-iteration table; it never feeds back into training.
    """
    if not split.labeled or not split.unlabeled:
        raise ValueError("self-training needs labeled and unlabeled samples")
    out_dir = Path(out_dir) if out_dir else None
    heldout_ids = {s.id for s in split.validation} | {s.id for s in split.test}
    labeled = list(split.labeled)
    unlabeled = list(split.unlabeled)
    by_id = {s.id: s for s in unlabeled}
    in_labeled = {s.id for s in labeled}

    def stage_dir(name):
        if out_dir is None:
            return None
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def report(stage):
        if eval_samples:
            rep = evaluate(params, model_cfg, featurizer, eval_samples, threshold)
            result.stage_reports.append((stage, rep))
            d = stage_dir(stage)
            if d:
                (d / "metrics.json").write_text(rep.to_json())

    result = SelfTrainResult(params, [], [], split, [])
    d0 = stage_dir("iter_00")
    params, tlog = train(labeled, split.validation, params, model_cfg, train_cfg, featurizer,
                         threshold, out_dir=d0)
    result.logs.append(tlog)
    if d0:
        tlog.save(d0 / "train_log.json")
    report("iter_00")

    for t, tau in enumerate(tau_schedule(st_cfg), start=1):
        result.sizes.append((len(labeled), len(unlabeled)))
        pool = [s for s in unlabeled if s.id not in in_labeled] if not st_cfg.remove_accepted else unlabeled
        if pool:
            pred = predict_batches(featurizer(pool), params, model_cfg)
            batch = select_pseudo([s.id for s in pool], pred.multi_probs, pred.main_probs, tau,
                                  st_cfg.acceptance_rule, t, st_cfg.pseudo_threshold)
        else:
            batch = PseudoLabelBatch(iteration=t, tau_used=float(tau))
        accepted = set()
        for sid, multi, main, _ in batch.accepted:
            if sid in heldout_ids:
                raise AssertionError(f"held-out sample {sid} reached the pseudo-label pool")
            src = by_id[sid]
            labeled.append(Sample(id=sid, text=src.text, lang=src.lang, multi_label=multi,
                                  main_label=main, provenance=PSEUDO))
            in_labeled.add(sid)
            accepted.add(sid)
        if st_cfg.remove_accepted:
            unlabeled = [s for s in unlabeled if s.id not in accepted]
        result.batches.append(batch)
        log.info("iteration %d tau %.2f accepted %d |D_L|=%d", t, tau, len(batch), len(labeled))

        d = stage_dir(f"iter_{t:02d}")
        if d:
            (d / "pseudo_labels.jsonl").write_text(batch.to_jsonl())
        if st_cfg.from_scratch:
            params = init_model(model_cfg, init_seed)
        cfg_t = replace(train_cfg, seed=train_cfg.seed + t)
        params, tlog = train(labeled, split.validation, params, model_cfg, cfg_t, featurizer,
                             threshold, out_dir=d)
        result.logs.append(tlog)
        if d:
            tlog.save(d / "train_log.json")
        report(f"iter_{t:02d}")
        if len(batch) == 0 and tau <= st_cfg.tau_min:
            break

    result.sizes.append((len(labeled), len(unlabeled)))
    result.params = params
    result.split = DatasetSplit(labeled, unlabeled, split.validation, split.test, split.hidden)
    return result
