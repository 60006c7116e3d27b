"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed in the pytest terminal summary, or directly with
``python3 tests/test_acceptance.py``. Criteria 7 and 8 train real models and
take minutes.
"""

import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES, make_batch  # noqa: E402

from mtst import config as C  # noqa: E402
from mtst import runner  # noqa: E402
from mtst.cli import main  # noqa: E402
from mtst.encoder import EncoderConfig  # noqa: E402
from mtst.gradcheck import check_gradients  # noqa: E402
from mtst.metrics import jaccard_macro, mae_mse, mcc, prf_macro  # noqa: E402
from mtst.model import (FusionConfig, ModelConfig, batch_losses, forward, init_model,  # noqa: E402
                        loss_and_grad, loss_joint)
from mtst.selftrain import SelfTrainConfig, tau_schedule  # noqa: E402

# tolerances and budgets
GRAD_REL_TOL = 1e-4
GRAD_H = 1e-5
GRAD_SECONDS = 60
ORACLE_TOL = 1e-12
ORACLE_SECONDS = 10
LEARN_F1 = 0.95
LEARN_SECONDS = 300
EFFICACY_GAIN = 0.02
EFFICACY_SEEDS = (0, 1, 2, 3, 4)
EFFICACY_SECONDS = 900

TINY = {"data.synth.n_samples": 300, "tokenizer.vocab_size": 300, "tokenizer.n_max": 24,
        "encoder.layers": 1, "encoder.hidden": 16, "encoder.heads": 2, "train.epochs": 2,
        "train.lr": 1e-2, "baseline.steps": 50}


def record(n, title, ok, detail):
    line = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --- 1 ------------------------------------------------------------------------

def test_c01_gradient_correctness():
    t0 = time.time()
    cfg = ModelConfig(EncoderConfig(layers=2, hidden=16, heads=2, vocab_size=40, n_max=8, dropout_p=0.1),
                      FusionConfig(feature_dense_dim=5, lam=0.7), n_multi=3, n_main=3, n_features=4)
    params = init_model(cfg, 1)
    rng = np.random.default_rng(0)
    for k, v in params.values.items():
        params.values[k] = v + rng.normal(0.0, 0.3, v.shape)
    params.grads = {k: np.zeros_like(v) for k, v in params.values.items()}
    batch = make_batch(np.random.default_rng(3))

    # dropout on, with a fixed mask stream, so every branch is exercised
    loss_and_grad(batch, params, cfg, "train", np.random.default_rng(5), lam=0.7)
    analytic = {k: g.copy() for k, g in params.grads.items()}

    def loss():
        pred, _ = forward(batch, params, cfg, "train", np.random.default_rng(5))
        return batch_losses(pred, batch, 0.7)[2]

    errors = check_gradients(loss, params, analytic, h=GRAD_H)
    worst = max(errors, key=errors.get)
    elapsed = time.time() - t0
    ok = errors[worst] < GRAD_REL_TOL and elapsed < GRAD_SECONDS and len(errors) == len(params.names)
    record(1, "gradient correctness", ok,
           f"{len(errors)} tensors, max rel err {errors[worst]:.2e} ({worst}) < {GRAD_REL_TOL:g}, "
           f"{elapsed:.1f}s < {GRAD_SECONDS}s")


# --- 2 ------------------------------------------------------------------------

def test_c02_loss_weight_annihilation(tiny_config, tiny_params, tiny_batch):
    norms = {}
    for lam, names in ((1.0, ("head_s.w", "head_s.b")), (0.0, ("head_m.w", "head_m.b"))):
        tiny_params.zero_grad()
        loss_and_grad(tiny_batch, tiny_params, tiny_config, "train", np.random.default_rng(0), lam)
        for n in names:
            norms[(lam, n)] = float(np.linalg.norm(tiny_params.grads[n]))
    ok = all(v == 0.0 for v in norms.values())
    record(2, "loss-weight annihilation", ok,
           "lam=1: |dW_s|=|db_s|=0, lam=0: |dW_m|=|db_m|=0" if ok else str(norms))


# --- 3 ------------------------------------------------------------------------

def _mcc_binary(tn, fp, fn, tp):
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return 0.0 if den == 0 else (tp * tn - fp * fn) / den


def _jaccard_brute(T, P):
    vals = []
    for t, p in zip(T, P):
        ts = {j for j, v in enumerate(t) if v}
        ps = {j for j, v in enumerate(p) if v}
        vals.append(1.0 if not ts | ps else len(ts & ps) / len(ts | ps))
    return sum(vals) / len(vals)


def _prf_brute(T, P):
    ps, rs, fs = [], [], []
    for j in range(len(T[0])):
        tp = sum(1 for t, p in zip(T, P) if t[j] and p[j])
        pp = sum(1 for p in P if p[j])
        ap = sum(1 for t in T if t[j])
        pr = tp / pp if pp else 0.0
        rc = tp / ap if ap else 0.0
        ps.append(pr)
        rs.append(rc)
        fs.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    n = len(ps)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n


def _mae_mse_brute(T, Q):
    cells = [(q - t) for tr, qr in zip(T, Q) for t, q in zip(tr, qr)]
    return sum(abs(c) for c in cells) / len(cells), sum(c * c for c in cells) / len(cells)


def test_c03_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        cm = rng.integers(0, 30, (2, 2))
        if cm.sum() == 0:
            cm[0, 0] = 1
        worst = max(worst, abs(mcc(cm) - _mcc_binary(*cm.ravel().tolist())))
    for _ in range(200):
        N, Cn = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        T = rng.integers(0, 2, (N, Cn))
        P = rng.integers(0, 2, (N, Cn))
        Q = rng.random((N, Cn))
        Tl, Pl, Ql = T.tolist(), P.tolist(), Q.tolist()
        worst = max(worst, abs(jaccard_macro(T, P) - _jaccard_brute(Tl, Pl)))
        worst = max(worst, *(abs(a - b) for a, b in zip(prf_macro(T, P), _prf_brute(Tl, Pl))))
        worst = max(worst, *(abs(a - b) for a, b in zip(mae_mse(T, Q), _mae_mse_brute(Tl, Ql))))
    elapsed = time.time() - t0
    ok = worst <= ORACLE_TOL and elapsed < ORACLE_SECONDS
    record(3, "metric oracles", ok, f"max |diff| {worst:.1e} <= {ORACLE_TOL:g} over 1000 mcc + 200 "
           f"multi-label instances, {elapsed:.2f}s < {ORACLE_SECONDS}s")


# --- 4 ------------------------------------------------------------------------

def test_c04_hand_values():
    m = mcc([[4, 1], [2, 3]])  # TN=4 FP=1 FN=2 TP=3
    j = jaccard_macro([[1, 1, 0]], [[0, 1, 1]])  # {a,b} vs {b,c}
    lj = loss_joint(l_multi=1.0, l_main=2.0, lam=0.7)
    ok = abs(m - 10 / math.sqrt(600)) <= ORACLE_TOL and abs(j - 1 / 3) <= ORACLE_TOL and lj == 1.3
    record(4, "hand values", ok, f"mcc={m!r} (10/sqrt(600)={10 / math.sqrt(600)!r}), "
           f"jaccard={j!r}, loss_joint={lj!r}")


# --- 5 ------------------------------------------------------------------------

def test_c05_threshold_schedule():
    taus = tau_schedule(SelfTrainConfig(tau_init=0.9, tau_min=0.85, alpha=0.02, iterations=5))
    expected = [0.90, 0.88, 0.86, 0.85, 0.85]
    record(5, "threshold schedule", taus == expected, f"{taus} == {expected}")


# --- shared self-training runs --------------------------------------------------

@pytest.fixture(scope="module")
def efficacy_runs(tmp_path_factory):
    """Full model and no-self-training ablation on the synthetic preset, per seed."""
    root = tmp_path_factory.mktemp("efficacy")
    t0 = time.time()
    runs = {}
    for seed in EFFICACY_SEEDS:
        cfg = C.with_values(C.preset("synthetic"), seed=seed)
        full = runner.run_selftrain(cfg, root / f"seed{seed}" / "full")
        ablated = runner.run_selftrain(C.ablation(cfg, "without_self_training"),
                                       root / f"seed{seed}" / "without_self_training")
        runs[seed] = (full, ablated, root / f"seed{seed}")
    return runs, time.time() - t0


@pytest.fixture(scope="module")
def tiny_selftrain_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "st"
    cfg = C.with_values(C.preset("synthetic"), **{
        **TINY, "selftrain.tau_init": 0.45, "selftrain.tau_min": 0.4, "selftrain.iterations": 3,
        "train.epochs": 6, "train.early_stop_patience": 6})
    res = runner.run_selftrain(cfg, out)
    return cfg, out, res


# --- 6 ------------------------------------------------------------------------

def _bookkeeping(run_dir):
    """Checks one self-training run directory; returns a list of violations."""
    cfg = C.load(run_dir / "resolved_config.json")
    split, _ = runner.load_split(cfg)
    held = {s.id for s in split.validation + split.test}
    summary = json.loads((run_dir / "self_train_summary.json").read_text())
    sizes = summary["sizes"]
    problems = []
    if any(b[0] < a[0] for a, b in zip(sizes, sizes[1:])):
        problems.append("|D_L| decreased")
    if cfg.selftrain.remove_accepted and len({l + u for l, u in sizes}) != 1:
        problems.append("|D_L|+|D_U| changed")
    n_pseudo = 0
    for path in sorted(run_dir.glob("iter_*/pseudo_labels.jsonl")):
        for line in path.read_text().splitlines():
            row = json.loads(line)
            n_pseudo += 1
            if not row["confidence"] > row["tau_used"]:
                problems.append(f"{row['id']} confidence {row['confidence']} <= tau {row['tau_used']}")
            if row["id"] in held:
                problems.append(f"held-out {row['id']} pseudo-labeled")
    if n_pseudo != summary["n_pseudo"]:
        problems.append("pseudo count mismatch")
    return problems, n_pseudo


def test_c06_selftraining_bookkeeping(tiny_selftrain_run, efficacy_runs):
    dirs = [tiny_selftrain_run[1]] + [r[2] / "full" for r in efficacy_runs[0].values()]
    problems, total = [], 0
    for d in dirs:
        p, n = _bookkeeping(d)
        problems += [f"{d.name}: {x}" for x in p]
        total += n
    ok = not problems and total > 0
    record(6, "self-training bookkeeping", ok,
           f"{len(dirs)} runs, {total} pseudo-labels, monotone |D_L|, constant pool, conf > tau, "
           f"no held-out ids" if ok else "; ".join(problems[:5]) or "no pseudo-labels accepted")


# --- 7 ------------------------------------------------------------------------

def test_c07_learnability(tmp_path):
    t0 = time.time()
    cfg = C.preset("synthetic-fast")
    model = runner.run_train(cfg, tmp_path / "model")
    base = runner.run_baseline(cfg, tmp_path / "baseline")
    f_model = model["reports"]["test"].multi["f1_macro"]
    f_base = base["reports"]["test"].multi["f1_macro"]
    epochs = len(model["log"].epochs)
    n_labeled = len(runner.load_split(cfg)[0].labeled)
    elapsed = time.time() - t0
    ok = (f_model > LEARN_F1 and f_base > LEARN_F1 and epochs <= 3 and n_labeled >= 1000
          and elapsed < LEARN_SECONDS)
    record(7, "learnability floor", ok, f"model F1 {f_model:.4f}, baseline F1 {f_base:.4f} > {LEARN_F1} "
           f"({n_labeled} labeled, {epochs} epochs, {elapsed:.0f}s < {LEARN_SECONDS}s)")


# --- 8 ------------------------------------------------------------------------

def test_c08_selftraining_efficacy(efficacy_runs):
    runs, elapsed = efficacy_runs
    gains = []
    for seed, (full, ablated, _) in runs.items():
        gains.append(full["reports"]["test"].multi["f1_macro"] - ablated["reports"]["test"].multi["f1_macro"])
    mean = float(np.mean(gains))
    ok = mean >= EFFICACY_GAIN and elapsed < EFFICACY_SECONDS
    record(8, "self-training efficacy", ok, f"mean F1 gain {mean:+.4f} >= {EFFICACY_GAIN} over seeds "
           f"{list(runs)} (per seed {', '.join(f'{g:+.3f}' for g in gains)}), "
           f"{elapsed:.0f}s < {EFFICACY_SECONDS}s")


# --- 9 ------------------------------------------------------------------------

def test_c09_ablation_harness(tmp_path):
    overrides = [x for k, v in TINY.items() for x in ("--set", f"{k}={v}")]
    out = tmp_path / "ablate"
    code = main(["ablate", "--preset", "synthetic", *overrides, "--tau-init", "0.45",
                 "--tau-min", "0.4", "--out", str(out)])
    rows = (out / "ablation.csv").read_text().splitlines() if code == 0 else []
    no_multi = json.loads((out / "without_multi_label" / "metrics_test.json").read_text())
    no_multi_iters = sorted(p.name for p in (out / "without_multi_label").glob("iter_*"))
    no_st = json.loads((out / "without_self_training" / "self_train_summary.json").read_text())
    no_st_pseudo = list((out / "without_self_training").glob("iter_*/pseudo_labels.jsonl"))
    multi_everywhere_else = all(
        json.loads((out / s / "metrics_test.json").read_text())["multi"] is not None
        for s in ("baseline_encoder", "without_self_training", "full"))
    checks = {
        "exit 0": code == 0,
        "4 rows": len(rows) == 5,
        "no multi metrics": no_multi["multi"] is None and all(
            json.loads((out / "without_multi_label" / d / "metrics.json").read_text())["multi"] is None
            for d in no_multi_iters),
        "zero iterations": no_st["iterations_run"] == 0 and not no_st_pseudo,
        "others keep multi": multi_everywhere_else,
    }
    ok = all(checks.values())
    record(9, "ablation harness", ok, ", ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items()))


# --- 10 -----------------------------------------------------------------------

def test_c10_determinism(tiny_selftrain_run, tmp_path):
    cfg, first, _ = tiny_selftrain_run
    replay = tmp_path / "replay"
    code = main(["selftrain", "--config", str(first / "resolved_config.json"), "--out", str(replay)])
    same = []
    for name in ["metrics_test.json", "metrics_validation.json"] + \
            [str(p.relative_to(first)) for p in sorted(first.glob("iter_*/metrics.json"))]:
        same.append((first / name).read_bytes() == (replay / name).read_bytes())
    b1, b2 = tmp_path / "b1", tmp_path / "b2"
    runner.run_baseline(cfg, b1)
    main(["baseline", "--config", str(b1 / "resolved_config.json"), "--out", str(b2)])
    same.append((b1 / "metrics_test.json").read_bytes() == (b2 / "metrics_test.json").read_bytes())
    ok = code == 0 and all(same)
    record(10, "determinism", ok, f"{sum(same)}/{len(same)} MetricsReport files bit-identical on replay "
           "of resolved configs (selftrain stages + baseline)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
