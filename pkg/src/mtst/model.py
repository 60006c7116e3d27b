"""Feature fusion, dual prediction heads and the weighted joint loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoder as enc
from .encoder import EncoderConfig, ModelParams, ShapeError, dropout_mask

PROB_EPS = 1e-12
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class FusionConfig:
    feature_dense_dim: int = 16
    feature_dropout_p: float = 0.3
    lam: float = 0.7
    use_features: bool = True
    multi_head: bool = True  # False drops multi-label metrics (ablation)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if not 0.0 <= self.feature_dropout_p < 1.0:
            raise ValueError("feature_dropout_p must be in [0, 1)")
        if self.feature_dense_dim < 1:
            raise ValueError("feature_dense_dim must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    n_multi: int = 3    # C
    n_main: int = 3     # K
    n_features: int = 4  # F

    @property
    def fused_dim(self):
        extra = self.fusion.feature_dense_dim if self.fusion.use_features else 0
        return self.encoder.hidden + extra

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(encoder=EncoderConfig(**d["encoder"]), fusion=FusionConfig(**d["fusion"]),
                   n_multi=d["n_multi"], n_main=d["n_main"], n_features=d["n_features"])


@dataclass
class Prediction:
    """Batched head outputs: multi_probs (B, C), main_probs (B, K)."""
    multi_probs: np.ndarray
    main_probs: np.ndarray
    multi_logits: np.ndarray = None
    main_logits: np.ndarray = None


def init_model(config, seed):
    params = enc.init_params(config.encoder, seed)
    rng = np.random.default_rng([seed, 17])
    df, F = config.fused_dim, config.n_features
    if config.fusion.use_features:
        params.add("fuse.w", rng.normal(0.0, enc.INIT_STD, (F, config.fusion.feature_dense_dim)))
        params.add("fuse.b", np.zeros(config.fusion.feature_dense_dim))
    params.add("head_m.w", rng.normal(0.0, enc.INIT_STD, (config.n_multi, df)))
    params.add("head_m.b", np.zeros(config.n_multi))
    params.add("head_s.w", rng.normal(0.0, enc.INIT_STD, (config.n_main, df)))
    params.add("head_s.b", np.zeros(config.n_main))
    return params


# --- heads and losses -----------------------------------------------------------

def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    z = x - x.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def fuse(h, phi, params, config, mode="eval", rng=None):
    """concat(h, tanh(dropout(phi) W + b)); returns ``(fused, cache)``."""
    h = np.atleast_2d(h)
    if not config.fusion.use_features:
        return h, None
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape != (h.shape[0], config.n_features):
        raise ShapeError(f"feature batch {phi.shape} != ({h.shape[0]}, {config.n_features})")
    m = None
    if mode == "train":
        m = dropout_mask(rng, phi.shape, config.fusion.feature_dropout_p)
    phi_d = phi if m is None else phi * m
    u = np.tanh(phi_d @ params["fuse.w"] + params["fuse.b"])
    return np.concatenate([h, u], axis=1), (phi_d, u)


def fuse_backward(dfused, cache, params, config):
    """Splits the fused gradient; accumulates fusion grads, returns d/dh."""
    d = config.encoder.hidden
    if cache is None:
        return dfused
    phi_d, u = cache
    du = dfused[:, d:] * (1.0 - u * u)
    params.grads["fuse.w"] += phi_d.T @ du
    params.grads["fuse.b"] += du.sum(0)
    return dfused[:, :d]


def predict(fused, params):
    fused = np.atleast_2d(fused)
    ml = fused @ params["head_m.w"].T + params["head_m.b"]
    sl = fused @ params["head_s.w"].T + params["head_s.b"]
    if not (np.isfinite(ml).all() and np.isfinite(sl).all()):
        raise FloatingPointError("non-finite logits")
    return Prediction(sigmoid(ml), softmax(sl), ml, sl)


def _as_probs(pred, attr):
    return np.atleast_2d(getattr(pred, attr) if isinstance(pred, Prediction) else pred)


def loss_multi(pred, y):
    """Per-sample BCE summed over labels, probabilities clamped to [eps, 1-eps]."""
    p = np.clip(_as_probs(pred, "multi_probs"), PROB_EPS, 1.0 - PROB_EPS)
    y = np.atleast_2d(y)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum(-1)


def loss_main(pred, z):
    """Per-sample categorical CE; ``z`` is one-hot (B, K) or class indices (B,)."""
    p = np.clip(_as_probs(pred, "main_probs"), PROB_EPS, 1.0 - PROB_EPS)
    z = np.asarray(z)
    if z.ndim <= 1 and np.issubdtype(z.dtype, np.integer):
        z = np.eye(p.shape[-1])[np.atleast_1d(z)]
    return -(np.atleast_2d(z) * np.log(p)).sum(-1)


def loss_joint(l_multi, l_main, lam):
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    return lam * l_multi + (1.0 - lam) * l_main


def binarize(pred, threshold=DEFAULT_THRESHOLD):
    """Threshold multi-label probabilities; argmax (lowest index on ties) for main."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    multi = (_as_probs(pred, "multi_probs") >= threshold).astype(np.int64)
    main = np.argmax(_as_probs(pred, "main_probs"), axis=-1)
    return multi, main


# --- full model -------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    phi: np.ndarray
    y: np.ndarray          # (B, C) multi-label targets (zeros where absent)
    has_multi: np.ndarray  # (B,) bool
    z: np.ndarray          # (B,) main-label indices (0 where absent)
    has_main: np.ndarray   # (B,) bool

    def __len__(self):
        return len(self.ids)

    def take(self, idx):
        return Batch(*(getattr(self, f)[idx] for f in
                       ("ids", "mask", "phi", "y", "has_multi", "z", "has_main")))


def forward(batch, params, config, mode="eval", rng=None):
    # trailing all-PAD columns cannot affect [CLS]; drop them for speed
    n = max(int(batch.mask.sum(1).max(initial=1)), 1)
    H, h, tape = enc.forward(batch.ids[:, :n], batch.mask[:, :n], params, config.encoder, mode, rng)
    fused, fcache = fuse(h, batch.phi, params, config, mode, rng)
    pred = predict(fused, params)
    return pred, (tape, fused, fcache)


def batch_losses(pred, batch, lam):
    """Masked batch-mean task losses and their weighted combination."""
    lm = loss_multi(pred, batch.y)
    ls = loss_main(pred, batch.z)
    n_m, n_s = batch.has_multi.sum(), batch.has_main.sum()
    l_multi = float(lm[batch.has_multi].sum() / n_m) if n_m else 0.0
    l_main = float(ls[batch.has_main].sum() / n_s) if n_s else 0.0
    return l_multi, l_main, loss_joint(l_multi, l_main, lam)


def loss_and_grad(batch, params, config, mode="eval", rng=None, lam=None):
    """Forward + backward of the joint loss; accumulates into ``params.grads``.

    Returns ``(l_multi, l_main, l_total, pred)``.
    """
    lam = config.fusion.lam if lam is None else lam
    pred, (tape, fused, fcache) = forward(batch, params, config, mode, rng)
    l_multi, l_main, total = batch_losses(pred, batch, lam)

    n_m, n_s = batch.has_multi.sum(), batch.has_main.sum()
    p = pred.multi_probs
    live = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)  # the clamp has zero slope outside
    w_m = (lam / n_m) if n_m else 0.0
    d_ml = w_m * (p - batch.y) * live * batch.has_multi[:, None]
    q = pred.main_probs
    onehot = np.eye(config.n_main)[batch.z]
    q_true = (q * onehot).sum(-1)
    live_s = (q_true > PROB_EPS) & (q_true < 1.0 - PROB_EPS)
    w_s = ((1.0 - lam) / n_s) if n_s else 0.0
    d_sl = w_s * (q - onehot) * (live_s & batch.has_main)[:, None]

    G = params.grads
    G["head_m.w"] += d_ml.T @ fused
    G["head_m.b"] += d_ml.sum(0)
    G["head_s.w"] += d_sl.T @ fused
    G["head_s.b"] += d_sl.sum(0)
    dfused = d_ml @ params["head_m.w"] + d_sl @ params["head_s.w"]
    dh = fuse_backward(dfused, fcache, params, config)
    enc.backward(tape, dh, params, config.encoder)
    return l_multi, l_main, total, pred


def predict_batches(batch, params, config, chunk=256):
    """Eval-mode predictions over a large batch, chunked for memory."""
    multi, main = [], []
    for start in range(0, len(batch), chunk):
        pred, _ = forward(batch.take(slice(start, start + chunk)), params, config, "eval")
        multi.append(pred.multi_probs)
        main.append(pred.main_probs)
    if not multi:
        return Prediction(np.zeros((0, config.n_multi)), np.zeros((0, config.n_main)))
    return Prediction(np.concatenate(multi), np.concatenate(main))
