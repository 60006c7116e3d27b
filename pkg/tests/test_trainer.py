import numpy as np
import pytest

from mtst import checkpoint, trainer
from mtst.encoder import ModelParams
from mtst.model import init_model
from mtst.trainer import AdamState, TrainConfig, TrainingError, adamw_step, clip_grads, evaluate, train


def one_param(value, grad):
    p = ModelParams({"w": np.array(value, float)})
    p.grads["w"][...] = grad
    return p


class TestAdamW:
    def test_first_step_is_lr_sign(self):
        p = one_param([1.0, -1.0, 2.0], [0.3, -5.0, 0.5])
        adamw_step(p, AdamState.zeros_like(p), TrainConfig(lr=0.1, weight_decay=0.0))
        # bias-corrected first step is lr * g / (|g| + eps)
        np.testing.assert_allclose(p["w"], [0.9, -0.9, 1.9], rtol=1e-8)

    def test_decay_is_decoupled(self):
        p = one_param([2.0], [0.0])
        adamw_step(p, AdamState.zeros_like(p), TrainConfig(lr=0.1, weight_decay=0.5))
        assert p["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_zero_lr_is_identity(self):
        p = one_param([1.0, 2.0], [3.0, 4.0])
        adamw_step(p, AdamState.zeros_like(p), TrainConfig(lr=0.0, weight_decay=0.01))
        assert p["w"].tolist() == [1.0, 2.0]

    def test_step_counter(self):
        p = one_param([1.0], [1.0])
        st = AdamState.zeros_like(p)
        for _ in range(3):
            adamw_step(p, st, TrainConfig())
        assert st.step == 3

    def test_clip(self):
        p = one_param([0.0, 0.0], [3.0, 4.0])
        assert clip_grads(p, 1.0) == 5.0
        assert np.linalg.norm(p.grads["w"]) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay="cosine")


@pytest.fixture
def fit(small_split, small_setup):
    _, fz, mc = small_setup

    def run(cfg, out_dir=None, resume=False, params=None):
        params = init_model(mc, 0) if params is None else params
        return train(small_split.labeled, small_split.validation, params, mc, cfg, fz,
                     out_dir=out_dir, resume=resume)
    return run


def test_zero_lr_leaves_params(fit, small_setup):
    before = init_model(small_setup[2], 0)
    params, _ = fit(TrainConfig(lr=0.0, epochs=1))
    assert all((params[k] == before[k]).all() for k in before)


def test_training_reduces_loss(fit):
    _, log = fit(TrainConfig(lr=3e-3, epochs=4, early_stop_patience=4))
    assert log.epochs[-1]["train_loss"] < log.epochs[0]["train_loss"]
    assert log.stop_reason in ("epochs_exhausted", "early_stopped")


def test_deterministic(fit):
    a, la = fit(TrainConfig(lr=1e-3, epochs=2, seed=3))
    b, lb = fit(TrainConfig(lr=1e-3, epochs=2, seed=3))
    assert all((a[k] == b[k]).all() for k in a)
    assert la.to_dict() == lb.to_dict()


def test_best_epoch_restored(fit, small_split, small_setup):
    _, fz, mc = small_setup
    params, log = fit(TrainConfig(lr=3e-3, epochs=4, early_stop_patience=4))
    best = min(log.epochs, key=lambda e: e["val_loss"])
    assert log.best_epoch == best["epoch"]
    val = trainer.validation_loss(fz(small_split.validation), params, mc, mc.fusion.lam)
    assert val == pytest.approx(best["val_loss"])


def test_resume_matches_uninterrupted(fit, tmp_path, monkeypatch):
    cfg = TrainConfig(lr=1e-3, epochs=3, early_stop_patience=5)
    full, _ = fit(cfg, out_dir=tmp_path / "a")

    calls = {"n": 0}
    real = trainer.validation_loss

    def crash_on_second_epoch(*args):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return real(*args)

    monkeypatch.setattr(trainer, "validation_loss", crash_on_second_epoch)
    with pytest.raises(KeyboardInterrupt):
        fit(cfg, out_dir=tmp_path / "b")
    monkeypatch.setattr(trainer, "validation_loss", real)
    resumed, log = fit(cfg, out_dir=tmp_path / "b", resume=True)
    assert len(log.epochs) == 3
    assert all((full[k] == resumed[k]).all() for k in full)


def test_resume_without_checkpoint(fit, tmp_path):
    with pytest.raises(TrainingError):
        fit(TrainConfig(), out_dir=tmp_path, resume=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_reported(fit, small_setup):
    params = init_model(small_setup[2], 0)
    params.values["head_s.w"][:] = 1e308
    with pytest.raises((TrainingError, FloatingPointError)):
        fit(TrainConfig(epochs=1), params=params)


def test_checkpoint_roundtrip(tmp_path, small_setup):
    mc = small_setup[2]
    params = init_model(mc, 2)
    opt = AdamState.zeros_like(params)
    opt.step = 7
    rng = np.random.default_rng(5)
    checkpoint.save(tmp_path / "c.npz", mc, params, opt, rng, meta={"k": 1})
    ck = checkpoint.load(tmp_path / "c.npz")
    assert ck["model_config"] == mc
    assert ck["params"].names == params.names
    assert all((ck["params"][k] == params[k]).all() for k in params)
    assert ck["optimizer"].step == 7 and ck["meta"] == {"k": 1}
    assert ck["rng"].random() == rng.random()


def test_evaluate_report(small_split, small_setup):
    _, fz, mc = small_setup
    rep = evaluate(init_model(mc, 0), mc, fz, small_split.test)
    assert rep.n_samples == len(small_split.test)
    assert set(rep.multi) >= {"f1_macro", "jaccard_macro"}
