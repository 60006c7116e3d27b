"""End-to-end experiment runs writing self-describing run directories."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .baseline import evaluate_baseline, fit_baseline
from .data import (DatasetSplit, FieldMap, LabelSchema, generate_synthetic, load_dataset,
                   write_jsonl)
from .features import DEFAULT_LEXICON, SensitiveLexicon, width
from .metrics import MAIN_KEYS, MULTI_KEYS, MetricsReport, threshold_sweep, write_csv
from .model import ModelConfig, init_model, predict_batches
from .selftrain import self_train
from .tokenizer import Vocabulary, train_vocab
from .trainer import Featurizer, evaluate, train
from . import checkpoint

log = logging.getLogger(__name__)

SPLIT_FILES = ("labeled", "unlabeled", "validation", "test")
CSV_FIELDS = ["run", "stage", "n_samples", *MAIN_KEYS, *MULTI_KEYS]


class ReportError(ValueError):
    pass


# --- setup -------------------------------------------------------------------

def resolve(cfg):
    """Pin derived values so the written config alone replays the run."""
    return C.with_values(cfg, **{"train.seed": cfg.seed,
                                 "encoder.n_max": cfg.tokenizer.n_max})


def load_split(cfg):
    dc = cfg.data
    if dc.source == "synthetic":
        synth = dc.synth
        split = generate_synthetic(synth, cfg.seed)
        return split, synth.schema()
    if dc.source != "dir":
        raise C.ConfigError(f"unknown data.source {dc.source!r}")
    if not dc.path:
        raise C.ConfigError("data.path is required for data.source=dir")
    if not dc.multi_labels:
        raise C.ConfigError("data.multi_labels is required for data.source=dir")
    schema = LabelSchema(tuple(dc.multi_labels), tuple(dc.main_labels))
    root = Path(dc.path)
    parts = {}
    for name in SPLIT_FILES:
        path = root / f"{name}.{dc.format}"
        if not path.exists():
            if name == "unlabeled":
                parts[name] = []
                continue
            raise FileNotFoundError(f"missing split file: {path}")
        samples, _ = load_dataset(path, dc.format, FieldMap(**dc.field_map), schema,
                                  reject_budget=dc.reject_budget)
        parts[name] = samples
    hidden = {}
    unlabeled = []
    for s in parts["unlabeled"]:
        if s.has_labels:
            hidden[s.id] = (s.multi_label, s.main_label)
            s = replace(s, multi_label=None, main_label=None)
        unlabeled.append(s)
    split = DatasetSplit(parts["labeled"], unlabeled, parts["validation"], parts["test"], hidden)
    split.check_disjoint()
    return split, schema


def load_lexicon(cfg):
    if cfg.features.lexicon_path:
        return SensitiveLexicon.load(cfg.features.lexicon_path)
    return DEFAULT_LEXICON


def build(cfg, split, schema, vocab=None):
    """Vocabulary, featurizer and model config for a run."""
    if vocab is None:
        texts = [s.text for s in split.labeled + split.unlabeled]
        vocab = train_vocab(texts, cfg.tokenizer.vocab_size, seed=cfg.seed)
    lexicon = load_lexicon(cfg)
    fz = Featurizer(vocab, lexicon, cfg.tokenizer.n_max, schema.C, cfg.features.len_cap)
    enc = replace(cfg.encoder, vocab_size=vocab.size, n_max=cfg.tokenizer.n_max)
    mc = ModelConfig(encoder=enc, fusion=cfg.fusion, n_multi=schema.C, n_main=schema.K,
                     n_features=width(lexicon))
    return vocab, fz, mc


def _write_metrics(out, name, report):
    (out / f"metrics_{name}.json").write_text(report.to_json())


def _stage_rows(run, stages):
    rows = []
    for stage, rep in stages:
        row = {"run": run, "stage": stage}
        row.update(rep.flat())
        rows.append(row)
    return rows


def _prepare(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = resolve(cfg)
    split, schema = load_split(cfg)
    vocab, fz, mc = build(cfg, split, schema)
    cfg = C.with_values(cfg, **{"encoder.vocab_size": vocab.size})
    cfg.save(out / "resolved_config.json")
    vocab.save(out / "vocab.json")
    (out / "schema.json").write_text(json.dumps(schema.to_dict()))
    return cfg, out, split, schema, fz, mc


# --- commands ----------------------------------------------------------------

def run_preprocess(inputs, out_dir, schema, field_map=None, format=None, reject_budget=0.01):
    """Clean and validate input files into ``out_dir``; inputs are never modified."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for path in map(Path, inputs):
        samples, report = load_dataset(path, format, field_map, schema,
                                       reject_budget=reject_budget)
        target = out / (path.stem + ".jsonl")
        if target.resolve() == path.resolve():
            raise ValueError(f"output would overwrite input {path}")
        write_jsonl(target, samples, schema)
        reports[path.name] = report
    (out / "preprocess_report.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    return reports


def run_train(cfg, out_dir, resume=False):
    cfg, out, split, schema, fz, mc = _prepare(cfg, out_dir)
    params = init_model(mc, cfg.seed)
    params, tlog = train(split.labeled, split.validation, params, mc, cfg.train, fz,
                         cfg.eval.threshold, out_dir=out, resume=resume)
    tlog.save(out / "train_log.json")
    checkpoint.save(out / "model.npz", mc, params)
    reports = {}
    for name in ("validation", "test"):
        samples = getattr(split, name)
        if samples:
            reports[name] = evaluate(params, mc, fz, samples, cfg.eval.threshold)
            _write_metrics(out, name, reports[name])
    if "test" in reports:
        write_csv(out / "metrics.csv", _stage_rows(out.name, [("final", reports["test"])]), CSV_FIELDS)
    return {"params": params, "log": tlog, "reports": reports, "model_config": mc}


def run_selftrain(cfg, out_dir):
    """Self-training run; with ``self_training`` off it trains once and runs zero iterations."""
    cfg, out, split, schema, fz, mc = _prepare(cfg, out_dir)
    params = init_model(mc, cfg.seed)
    summary = {"self_training": cfg.self_training, "iterations_run": 0, "taus": [],
               "accepted": [], "sizes": [], "pseudo_label_accuracy": []}
    if cfg.self_training and split.unlabeled:
        res = self_train(split, params, mc, cfg.train, cfg.selftrain, fz, out_dir=out,
                         eval_samples=split.test, threshold=cfg.eval.threshold,
                         init_seed=cfg.seed)
        params = res.params
        stages = res.stage_reports
        summary["iterations_run"] = len(res.batches)
        summary["taus"] = [b.tau_used for b in res.batches]
        summary["accepted"] = [len(b) for b in res.batches]
        summary["sizes"] = [list(s) for s in res.sizes]
        for b in res.batches:
            hits = [split.hidden[sid][1] == main for sid, _, main, _ in b.accepted
                    if sid in split.hidden]
            summary["pseudo_label_accuracy"].append(float(np.mean(hits)) if hits else None)
        pseudo_ids = sorted(s.id for s in res.split.labeled if s.provenance == "pseudo")
        summary["n_pseudo"] = len(pseudo_ids)
    else:
        d0 = out / "iter_00"
        d0.mkdir(exist_ok=True)
        params, tlog = train(split.labeled, split.validation, params, mc, cfg.train, fz,
                             cfg.eval.threshold, out_dir=d0)
        tlog.save(d0 / "train_log.json")
        stages = []
        if split.test:
            rep = evaluate(params, mc, fz, split.test, cfg.eval.threshold)
            (d0 / "metrics.json").write_text(rep.to_json())
            stages = [("iter_00", rep)]
        summary["sizes"] = [[len(split.labeled), len(split.unlabeled)]]
        summary["n_pseudo"] = 0
    checkpoint.save(out / "model.npz", mc, params)
    (out / "self_train_summary.json").write_text(json.dumps(summary, indent=2))
    reports = {}
    for name in ("validation", "test"):
        samples = getattr(split, name)
        if samples:
            reports[name] = evaluate(params, mc, fz, samples, cfg.eval.threshold)
            _write_metrics(out, name, reports[name])
    if "test" in reports:
        rows = _stage_rows(out.name, stages + [("final", reports["test"])])
        write_csv(out / "metrics.csv", rows, CSV_FIELDS)
    return {"params": params, "summary": summary, "reports": reports, "model_config": mc,
            "stages": stages}


def load_run(run_dir):
    run = Path(run_dir)
    cfg = C.load(run / "resolved_config.json")
    vocab = Vocabulary.load(run / "vocab.json")
    ck = checkpoint.load(run / "model.npz")
    split, schema = load_split(cfg)
    _, fz, mc = build(cfg, split, schema, vocab=vocab)
    return cfg, split, fz, ck["model_config"], ck["params"]


def run_evaluate(run_dir, split_name="test", threshold=None, sweep=False, out_path=None):
    cfg, split, fz, mc, params = load_run(run_dir)
    samples = getattr(split, split_name)
    threshold = cfg.eval.threshold if threshold is None else threshold
    rep = evaluate(params, mc, fz, samples, threshold)
    run = Path(run_dir)
    (Path(out_path) if out_path else run / f"eval_{split_name}.json").write_text(rep.to_json())
    rows = None
    if sweep:
        batch = fz(samples)
        pred = predict_batches(batch, params, mc)
        rows = threshold_sweep(batch.y, pred.multi_probs)
        write_csv(run / f"threshold_sweep_{split_name}.csv", rows,
                  ["threshold", "precision", "recall", "f1"])
    return rep, rows


def run_baseline(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = resolve(cfg)
    cfg.save(out / "resolved_config.json")
    split, schema = load_split(cfg)
    bc = cfg.baseline
    model = fit_baseline(split.labeled, schema.K, bc.reg, cfg.seed, bc.steps, bc.lr)
    reports = {}
    for name in ("validation", "test"):
        samples = getattr(split, name)
        if samples:
            reports[name] = evaluate_baseline(model, samples, cfg.eval.threshold)
            _write_metrics(out, name, reports[name])
    if "test" in reports:
        write_csv(out / "metrics.csv", _stage_rows(out.name, [("final", reports["test"])]), CSV_FIELDS)
    return {"model": model, "reports": reports}


def run_ablate(cfg, out_dir, settings=C.ABLATIONS):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, results = [], {}
    for name in settings:
        res = run_selftrain(C.ablation(cfg, name), out / name)
        results[name] = res
        row = {"setting": name, "iterations_run": res["summary"]["iterations_run"]}
        row.update(res["reports"]["test"].flat())
        rows.append(row)
    fields = ["setting", "iterations_run", "n_samples", *MAIN_KEYS, *MULTI_KEYS]
    write_csv(out / "ablation.csv", rows, fields)
    return rows, results


# --- reporting ---------------------------------------------------------------

def _check_schema(d, path, reference):
    """Compare key sets with the first report seen; a null section matches any."""
    sections = {"": set(d)}
    for name in ("main", "multi"):
        if isinstance(d.get(name), dict):
            sections[name] = set(d[name])
    for name, keys in sections.items():
        if name not in reference:
            reference[name] = (keys, path)
            continue
        ref_keys, ref_path = reference[name]
        if keys != ref_keys:
            field = sorted(keys ^ ref_keys)[0]
            field = f"{name}.{field}" if name else field
            raise ReportError(f"{path} differs from {ref_path} in field {field!r}")


def collect_reports(run_dirs):
    """One row per (run, stage) over iteration and final test reports.

    Returns ``(rows, missing)``; raises ReportError when report schemas differ.
    """
    rows, missing, reference = [], [], {}
    for run in map(Path, run_dirs):
        found = []
        for it in sorted(run.glob("iter_*/metrics.json")):
            found.append((it.parent.name, it))
        final = run / "metrics_test.json"
        if final.exists():
            found.append(("final", final))
        if not found:
            missing.append(str(run))
            continue
        for stage, path in found:
            d = json.loads(path.read_text())
            _check_schema(d, path, reference)
            row = {"run": run.name, "stage": stage}
            row.update(MetricsReport.from_dict(d).flat())
            rows.append(row)
    return rows, missing

