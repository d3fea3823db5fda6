"""Checkpoint directories: ``manifest.json`` + ``tensors.bin``.

The manifest carries the model config and, per tensor, its name, shape,
little-endian dtype string, byte offset and length into ``tensors.bin``.
Values are written raw, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from causalgr.errors import ContractError
from causalgr.models.config import ModelConfig
from causalgr.numeric import Tensor

FORMAT = "causalgr-checkpoint/1"


def save_checkpoint(path: str | Path, params: dict[str, Tensor], config: ModelConfig,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / "tensors.bin", "wb") as fh:
        for name in params:
            arr = params[name].data
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = np.ascontiguousarray(le).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                            "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "config": config.to_dict(), "tensors": entries}
    if extra:
        manifest["extra"] = extra
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], ModelConfig]:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path}: no checkpoint manifest")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ContractError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")
    blob = (path / "tensors.bin").read_bytes()
    params = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]: e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ContractError(f"{path / 'tensors.bin'}: truncated data for {e['name']}")
        dt = np.dtype(e["dtype"])
        arr = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
        params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
    return params, ModelConfig.from_dict(manifest["config"])
