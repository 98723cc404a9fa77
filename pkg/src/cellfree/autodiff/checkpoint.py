"""Portable JSON checkpoints: one record per parameter array."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def encode(layer, name: str, array) -> dict:
    array = np.asarray(array, dtype=float)
    return {"layer": layer, "name": name, "shape": list(array.shape),
            "data": array.reshape(-1).tolist()}


def decode(record: dict) -> np.ndarray:
    data = np.asarray(record["data"], dtype=float)
    shape = tuple(record["shape"])
    if data.size != int(np.prod(shape)):
        raise ValueError(f"record {record['name']} has {data.size} values for shape {shape}")
    return data.reshape(shape)


def save(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
