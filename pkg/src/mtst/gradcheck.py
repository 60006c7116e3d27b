"""Central finite-difference gradient checking for ModelParams."""

from __future__ import annotations

import numpy as np


def numeric_grad(loss_fn, x, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of array ``x`` (in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        a = loss_fn()
        flat[i] = old - h
        b = loss_fn()
        flat[i] = old
        g.reshape(-1)[i] = (a - b) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-4):
    """``|a - n| / max(|a|, |n|, floor)`` over whole tensors.

    The floor keeps tensors whose true gradient is zero (e.g. key biases,
    which softmax shift invariance cancels) from dividing noise by noise.
    """
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / den)


def check_gradients(loss_fn, params, analytic, h=1e-5, floor=1e-4, names=None):
    """Per-tensor relative errors between ``analytic`` grads and finite differences."""
    errors = {}
    for name in names or params.names:
        num = numeric_grad(loss_fn, params.values[name], h)
        errors[name] = relative_error(analytic[name], num, floor)
    return errors
