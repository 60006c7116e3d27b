"""Versioned .npz checkpoints: config, parameters in declared order, optimizer and RNG state."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoder import ModelParams

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, model_config, params, optimizer=None, rng=None, meta=None):
    arrays = {}
    names = params.names
    for i, name in enumerate(names):
        arrays[f"p{i:04d}"] = params.values[name]
    if optimizer is not None:
        for i, name in enumerate(names):
            arrays[f"m{i:04d}"] = optimizer.m[name]
            arrays[f"v{i:04d}"] = optimizer.v[name]
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": model_config.to_dict(),
        "names": names,
        "optimizer_step": None if optimizer is None else optimizer.step,
        "rng_state": None if rng is None else rng.bit_generator.state,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load(path):
    """Returns a dict with model_config, params, optimizer (or None), rng (or None), meta."""
    from .model import ModelConfig
    from .trainer import AdamState

    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        names = header["names"]
        params = ModelParams({n: z[f"p{i:04d}"].copy() for i, n in enumerate(names)})
        optimizer = None
        if header["optimizer_step"] is not None:
            optimizer = AdamState(
                m={n: z[f"m{i:04d}"].copy() for i, n in enumerate(names)},
                v={n: z[f"v{i:04d}"].copy() for i, n in enumerate(names)},
                step=header["optimizer_step"],
            )
    rng = None
    if header["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng_state"]
    return {
        "model_config": ModelConfig.from_dict(header["model_config"]),
        "params": params,
        "optimizer": optimizer,
        "rng": rng,
        "meta": header["meta"],
    }
