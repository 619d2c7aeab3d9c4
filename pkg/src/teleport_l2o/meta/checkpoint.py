"""Versioned JSON checkpoints for trained meta-optimizers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .l2o import L2OConfig
from .lstm import LstmParams

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode(nets: list[LstmParams]) -> list[dict]:
    out = []
    for p in nets:
        weights = {}
        for name, (_, shape) in p.layout.items():
            weights[name] = {"shape": list(shape), "data": [float(v) for v in p.view(name).ravel()]}
        out.append({"input_dim": p.input_dim, "hidden_dim": p.hidden_dim, "heads": list(p.heads), "weights": weights})
    return out


def dumps_checkpoint(nets: list[LstmParams], config: L2OConfig) -> str:
    doc = {"version": CHECKPOINT_VERSION, "variant": config.variant, "config": config.to_dict(), "nets": _encode(nets)}
    # float repr round-trips exactly, so weights survive bit for bit
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_checkpoint(nets: list[LstmParams], config: L2OConfig, path) -> None:
    Path(path).write_text(dumps_checkpoint(nets, config))


def loads_checkpoint(text: str) -> tuple[list[LstmParams], L2OConfig]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError("malformed checkpoint: missing version")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc['version']!r} != {CHECKPOINT_VERSION}")
    try:
        config = L2OConfig.from_dict(doc["config"])
        nets = []
        for n in doc["nets"]:
            p = LstmParams(n["input_dim"], n["hidden_dim"], tuple(n["heads"]), _zeros(n))
            for name, (_, shape) in p.layout.items():
                w = n["weights"][name]
                if tuple(w["shape"]) != tuple(shape):
                    raise CheckpointError(f"shape mismatch for {name}")
                p.view(name)[...] = np.asarray(w["data"], dtype=np.float64).reshape(shape)
            nets.append(p)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if doc.get("variant") != config.variant:
        raise CheckpointError("variant field disagrees with config")
    return nets, config


def _zeros(n: dict) -> np.ndarray:
    from .lstm import _size

    return np.zeros(_size(n["input_dim"], n["hidden_dim"], tuple(n["heads"])))


def load_checkpoint(path) -> tuple[list[LstmParams], L2OConfig]:
    return loads_checkpoint(Path(path).read_text())
