"""Small pre-norm transformer encoder with hand-written backward pass.

Everything runs batched: ``ids`` and ``mask`` are (B, n) integer arrays and the
hidden states are (B, n, d). The sentence representation is the final-layer
state at position 0 ([CLS]).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

LN_EPS = 1e-12
INIT_STD = 0.02
_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, where):
        super().__init__(f"non-finite activation in {where}")
        self.where = where


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn_mult: int = 4
    vocab_size: int = 8192
    n_max: int = 128
    dropout_p: float = 0.1

    def __post_init__(self):
        for name in ("layers", "hidden", "heads", "ffn_mult", "vocab_size", "n_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self):
        return asdict(self)


class ModelParams:
    """Named parameter tensors with same-shaped gradient buffers."""

    def __init__(self, values):
        self.values = dict(values)
        self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    @property
    def names(self):
        return list(self.values)

    def add(self, name, value):
        if name in self.values:
            raise KeyError(f"duplicate parameter {name}")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self):
        other = ModelParams({k: v.copy() for k, v in self.values.items()})
        for k, g in self.grads.items():
            other.grads[k][...] = g
        return other

    def load_values(self, other):
        for k, v in other.values.items():
            self.values[k][...] = v

    def n_params(self):
        return sum(v.size for v in self.values.values())

    def all_finite(self):
        return all(np.isfinite(v).all() for v in self.values.values())


def _layer_names(l):
    p = f"layer{l}."
    return [p + s for s in ("ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
                            "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln2.g", "ln2.b",
                            "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2")]


def init_params(config, seed):
    """Normal(0, 0.02) weights, zero biases, unit normalization gains."""
    rng = np.random.default_rng(seed)
    d, f = config.hidden, config.hidden * config.ffn_mult

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    values = {"tok_emb": w(config.vocab_size, d), "pos_emb": w(config.n_max, d)}
    for l in range(config.layers):
        shapes = {"ln1.g": None, "ln1.b": (d,), "attn.wq": (d, d), "attn.bq": (d,),
                  "attn.wk": (d, d), "attn.bk": (d,), "attn.wv": (d, d), "attn.bv": (d,),
                  "attn.wo": (d, d), "attn.bo": (d,), "ln2.g": None, "ln2.b": (d,),
                  "ffn.w1": (d, f), "ffn.b1": (f,), "ffn.w2": (f, d), "ffn.b2": (d,)}
        for name in _layer_names(l):
            key = name.split(".", 1)[1]
            shape = shapes[key]
            if shape is None:
                values[name] = np.ones(d)
            elif len(shape) == 1:
                values[name] = np.zeros(shape)
            else:
                values[name] = w(*shape)
    values["final_ln.g"] = np.ones(d)
    values["final_ln.b"] = np.zeros(d)
    return ModelParams(values)


# --- primitives ---------------------------------------------------------------

def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy, cache, g):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy, x, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def dropout_mask(rng, shape, p):
    if p <= 0.0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


def _outer(a, b):
    """sum over batch and positions of a^T b."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _check(x, where):
    if not np.isfinite(x).all():
        raise NonFiniteError(where)


# --- forward / backward ----------------------------------------------------------

def forward(ids, mask, params, config, mode="eval", rng=None):
    """Returns ``(H, h, tape)`` with H of shape (B, n, d) and h = H[:, 0]."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim == 1:
        ids, mask = ids[None], mask[None]
    B, n = ids.shape
    d, nh = config.hidden, config.heads
    dh = d // nh
    if n > config.n_max or mask.shape != ids.shape:
        raise ShapeError(f"ids {ids.shape} / mask {mask.shape} vs n_max {config.n_max}")
    if params["tok_emb"].shape != (config.vocab_size, d):
        raise ShapeError("parameters do not match encoder config")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= config.vocab_size:
        raise ShapeError("token id outside vocabulary")
    train = mode == "train" and config.dropout_p > 0
    if train and rng is None:
        raise ValueError("train mode needs an rng")
    p_drop = config.dropout_p if train else 0.0

    key_ok = mask.astype(bool)[:, None, None, :]
    scale = 1.0 / math.sqrt(dh)
    tape = {"ids": ids, "mask": mask, "layers": [], "B": B, "n": n}

    x = params["tok_emb"][ids] + params["pos_emb"][:n][None]
    m = dropout_mask(rng, x.shape, p_drop)
    if m is not None:
        x = x * m
    tape["emb_drop"] = m

    for l in range(config.layers):
        P = f"layer{l}."
        cache = {}
        a, cache["ln1"] = layer_norm(x, params[P + "ln1.g"], params[P + "ln1.b"])
        cache["a"] = a

        def heads(t):
            return t.reshape(B, n, nh, dh).transpose(0, 2, 1, 3)

        q = heads(a @ params[P + "attn.wq"] + params[P + "attn.bq"])
        k = heads(a @ params[P + "attn.wk"] + params[P + "attn.bk"])
        v = heads(a @ params[P + "attn.wv"] + params[P + "attn.bv"])
        s = np.where(key_ok, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
        s = s - s.max(-1, keepdims=True)
        e = np.exp(s)
        pa = e / e.sum(-1, keepdims=True)
        o = (pa @ v).transpose(0, 2, 1, 3).reshape(B, n, d)
        y = o @ params[P + "attn.wo"] + params[P + "attn.bo"]
        cache.update(q=q, k=k, v=v, p=pa, o=o)
        m = dropout_mask(rng, y.shape, p_drop)
        if m is not None:
            y = y * m
        cache["drop1"] = m
        x = x + y
        _check(x, f"layer {l} attention")

        c, cache["ln2"] = layer_norm(x, params[P + "ln2.g"], params[P + "ln2.b"])
        f1 = c @ params[P + "ffn.w1"] + params[P + "ffn.b1"]
        g, t = gelu(f1)
        f2 = g @ params[P + "ffn.w2"] + params[P + "ffn.b2"]
        cache.update(c=c, f1=f1, t=t, g=g)
        m = dropout_mask(rng, f2.shape, p_drop)
        if m is not None:
            f2 = f2 * m
        cache["drop2"] = m
        x = x + f2
        _check(x, f"layer {l} feed-forward")
        tape["layers"].append(cache)

    H, tape["final_ln"] = layer_norm(x, params["final_ln.g"], params["final_ln.b"])
    _check(H, "final normalization")
    return H, H[:, 0], tape


def backward(tape, grad_h, params, config, grad_H=None):
    """Accumulate d(loss)/d(theta) into ``params.grads`` given d(loss)/dh.

    ``grad_H`` optionally adds an upstream gradient on the full hidden matrix.
    """
    B, n = tape["B"], tape["n"]
    d, nh = config.hidden, config.heads
    dh = d // nh
    if len(tape["layers"]) != config.layers:
        raise ShapeError("tape was produced by a different encoder config")
    grad_h = np.asarray(grad_h, dtype=float).reshape(B, d)
    G = params.grads
    scale = 1.0 / math.sqrt(dh)

    dH = np.zeros((B, n, d)) if grad_H is None else np.array(grad_H, dtype=float)
    dH[:, 0] += grad_h
    dx, dg, db = layer_norm_backward(dH, tape["final_ln"], params["final_ln.g"])
    G["final_ln.g"] += dg
    G["final_ln.b"] += db

    for l in reversed(range(config.layers)):
        P = f"layer{l}."
        cache = tape["layers"][l]

        # feed-forward sublayer
        df2 = dx if cache["drop2"] is None else dx * cache["drop2"]
        G[P + "ffn.w2"] += _outer(cache["g"], df2)
        G[P + "ffn.b2"] += df2.sum((0, 1))
        dg_ = df2 @ params[P + "ffn.w2"].T
        df1 = gelu_backward(dg_, cache["f1"], cache["t"])
        G[P + "ffn.w1"] += _outer(cache["c"], df1)
        G[P + "ffn.b1"] += df1.sum((0, 1))
        dc = df1 @ params[P + "ffn.w1"].T
        dxl, dgl, dbl = layer_norm_backward(dc, cache["ln2"], params[P + "ln2.g"])
        G[P + "ln2.g"] += dgl
        G[P + "ln2.b"] += dbl
        dx = dx + dxl

        # attention sublayer
        dy = dx if cache["drop1"] is None else dx * cache["drop1"]
        G[P + "attn.wo"] += _outer(cache["o"], dy)
        G[P + "attn.bo"] += dy.sum((0, 1))
        do = (dy @ params[P + "attn.wo"].T).reshape(B, n, nh, dh).transpose(0, 2, 1, 3)
        pa, q, k, v = cache["p"], cache["q"], cache["k"], cache["v"]
        dp = do @ v.transpose(0, 1, 3, 2)
        dv = pa.transpose(0, 1, 3, 2) @ do
        ds = pa * (dp - (dp * pa).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B, n, d)

        a = cache["a"]
        da = np.zeros((B, n, d))
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            dt = merge(dt)
            G[P + f"attn.w{name}"] += _outer(a, dt)
            G[P + f"attn.b{name}"] += dt.sum((0, 1))
            da += dt @ params[P + f"attn.w{name}"].T
        dxl, dgl, dbl = layer_norm_backward(da, cache["ln1"], params[P + "ln1.g"])
        G[P + "ln1.g"] += dgl
        G[P + "ln1.b"] += dbl
        dx = dx + dxl

    if tape["emb_drop"] is not None:
        dx = dx * tape["emb_drop"]
    np.add.at(G["tok_emb"], tape["ids"], dx)
    G["pos_emb"][:n] += dx.sum(0)
