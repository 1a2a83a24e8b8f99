"""Checkpoint I/O: a JSON manifest plus one little-endian float64 blob.

The manifest lists ``(name, shape, dtype, offset)`` for each tensor in blob
order. Adam moments, when saved, follow the parameters in the same blob
under names ``adam.m.<param>`` / ``adam.v.<param>``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from amrl.errors import ConfigurationError
from amrl.tensor.adam import AdamState
from amrl.tensor.params import NetworkParams

FORMAT = "amrl-checkpoint"
DTYPE = "<f8"


def blob_path(manifest: str | Path) -> Path:
    return Path(manifest).with_suffix(".bin")


def save_checkpoint(path: str | Path, params: NetworkParams, adam: AdamState | None = None,
                    meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    entries = []
    chunks = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    for name, t in params.items():
        push(name, t.data)
    n_params = len(entries)
    if adam is not None:
        for name in params:
            push(f"adam.m.{name}", adam.m[name])
        for name in params:
            push(f"adam.v.{name}", adam.v[name])
    manifest = {
        "format": FORMAT,
        "version": 1,
        "blob": blob_path(path).name,
        "meta": meta or {},
        "tensors": entries[:n_params],
        "adam": None if adam is None else {"step_count": adam.step_count, "tensors": entries[n_params:]},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path(path).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ConfigurationError(f"{path} is not an {FORMAT} manifest")
    return manifest


def _read(blob: bytes, entry) -> np.ndarray:
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(blob, dtype=entry["dtype"], count=count, offset=entry["offset"])
    return arr.astype(np.float64).reshape(shape)


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, AdamState | None, dict[str, Any]]:
    manifest = read_manifest(path)
    blob = (Path(path).parent / manifest["blob"]).read_bytes()
    params = NetworkParams()
    for entry in manifest["tensors"]:
        params.add(entry["name"], _read(blob, entry))
    adam = None
    if manifest.get("adam"):
        state = AdamState(step_count=int(manifest["adam"]["step_count"]))
        for entry in manifest["adam"]["tensors"]:
            kind, name = entry["name"].split(".", 2)[1:]
            (state.m if kind == "m" else state.v)[name] = _read(blob, entry)
        adam = state
    return params, adam, manifest["meta"]
