"""Parameter checkpoints.

A checkpoint is a NumPy ``.npz`` archive.  Each parameter tensor is stored
under its dotted name (for example ``molnet.interactions.0.filter1.weight``)
as a float64 array.  The entry ``__meta__`` is a 0-d unicode array holding a
JSON object with at least ``format`` (the layout name), ``version`` and any
caller metadata such as the run configuration.  Loading verifies the format
name, the version and that names and shapes match the target exactly, so a
save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fragforge.neural.tensor import Tensor

FORMAT = "fragforge-params"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    header = {"format": FORMAT, "version": VERSION, **(meta or {})}
    arrays = {name: t.data for name, t in params.items()}
    if "__meta__" in arrays:
        raise CheckpointError("parameter name __meta__ is reserved")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} has no metadata entry")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} checkpoint")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} unsupported (need {VERSION})")
    return meta, arrays


def load_params(path, params: dict[str, Tensor]) -> dict:
    meta, arrays = read_checkpoint(path)
    if set(arrays) != set(params):
        missing = sorted(set(params) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(params))[:3]
        raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {t.shape}")
    for name, t in params.items():
        t.data = np.array(arrays[name], dtype=np.float64)
    return meta
