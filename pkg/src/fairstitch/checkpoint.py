"""JSON checkpoints for networks.

Layout::

    {"version": 1, "dims": [...], "stitch_index": null | k,
     "trainable": [flag per block],
     "params": {"block_0": {"w": [[...]], "b": [...]}, ...,
                "stitch": {"w": [[...]], "b": [...], "trainable": bool}},
     "optimizer": {"lr": ..., "momentum": ..., "weight_decay": ...},
     "phase": "...", "epoch": n, "seeds": {"init": ..., "data": ..., "train": ...}}

Floats are written with Python's shortest round-trip repr, so loading and
saving again reproduces the file byte for byte.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from .errors import CheckpointError
from .network import LayerBlock, Network

FORMAT_VERSION = 1


@dataclass
class CheckpointMeta:
    phase: str = "erm"
    epoch: int = 0
    optimizer: Dict[str, float] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)


@dataclass
class Checkpoint:
    network: Network
    meta: CheckpointMeta
    version: int = FORMAT_VERSION
    path: str = ""


def _block_dict(block: LayerBlock) -> Dict[str, object]:
    return {"w": block.weight.tolist(), "b": block.bias.reshape(-1).tolist()}


def checkpoint_dict(net: Network, meta: CheckpointMeta) -> Dict[str, object]:
    net.check()
    layer_params = {f"block_{i}": _block_dict(block) for i, block in enumerate(net.blocks)}
    if net.stitch is not None:
        layer_params["stitch"] = {**_block_dict(net.stitch), "trainable": net.stitch.trainable}
    return {
        "version": FORMAT_VERSION,
        "dims": net.dims,
        "stitch_index": net.stitch_index,
        "trainable": [block.trainable for block in net.blocks],
        "params": layer_params,
        "optimizer": {k: float(v) for k, v in meta.optimizer.items()},
        "phase": meta.phase,
        "epoch": int(meta.epoch),
        "seeds": {k: int(v) for k, v in meta.seeds.items()},
    }


def save_checkpoint(net: Network, meta: CheckpointMeta, path) -> Path:
    """
    Write a network and its metadata as a JSON checkpoint.

    Args:
        net: Network to save
        meta: Phase, epoch, optimizer settings and seeds
        path: Output path; parent directories are created

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        text = json.dumps(checkpoint_dict(net, meta), indent=1, allow_nan=False)
    except ValueError as e:
        raise CheckpointError(f"cannot serialise checkpoint for {path}: {e}") from e
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _matrix(value, rows: int, cols: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != rows:
        raise CheckpointError(f"{where}: expected {rows} rows")
    for r, row in enumerate(value):
        if not isinstance(row, list) or len(row) != cols:
            raise CheckpointError(f"{where}: row {r} must have {cols} entries")
    try:
        data = np.array(value, dtype=np.float64).reshape(rows, cols)
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"{where}: non-numeric entry") from e
    if not np.all(np.isfinite(data)):
        raise CheckpointError(f"{where}: non-finite entry")
    return data


def _layer(entry, in_dim: int, out_dim: int, activation: str, trainable: bool, where: str) -> LayerBlock:
    if not isinstance(entry, dict) or "w" not in entry or "b" not in entry:
        raise CheckpointError(f"{where}: expected an object with 'w' and 'b'")
    return LayerBlock(
        weight=_matrix(entry["w"], in_dim, out_dim, f"{where}.w"),
        bias=_matrix([entry["b"]], 1, out_dim, f"{where}.b"),
        activation=activation,
        trainable=trainable,
    )


def _require(data: dict, key: str, kind, path: Path):
    if key not in data:
        raise CheckpointError(f"{path}: missing field '{key}'")
    value = data[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise CheckpointError(f"{path}: field '{key}' has the wrong type")
    return value


def network_from_dict(data: dict, path: Path) -> Network:
    dims: List[int] = _require(data, "dims", list, path)
    if len(dims) < 2 or not all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims):
        raise CheckpointError(f"{path}: dims must be at least two positive integers, got {dims}")
    n_blocks = len(dims) - 1
    flags = _require(data, "trainable", list, path)
    if len(flags) != n_blocks or not all(isinstance(f, bool) for f in flags):
        raise CheckpointError(f"{path}: 'trainable' must hold {n_blocks} booleans")
    layer_params = _require(data, "params", dict, path)
    expected = {f"block_{i}" for i in range(n_blocks)}
    stitch_index = data.get("stitch_index")
    if stitch_index is not None:
        expected.add("stitch")
    if set(layer_params) != expected:
        raise CheckpointError(f"{path}: params keys {sorted(layer_params)} do not match dims (expected {sorted(expected)})")

    blocks = []
    for i in range(n_blocks):
        activation = "none" if i == n_blocks - 1 else "relu"
        blocks.append(_layer(layer_params[f"block_{i}"], dims[i], dims[i + 1], activation, flags[i],
                             f"{path}: params.block_{i}"))

    stitch = None
    if stitch_index is not None:
        if not isinstance(stitch_index, int) or isinstance(stitch_index, bool) or not 1 <= stitch_index < n_blocks:
            raise CheckpointError(f"{path}: stitch_index {stitch_index!r} out of range")
        entry = layer_params["stitch"]
        trainable = entry.get("trainable") if isinstance(entry, dict) else None
        if not isinstance(trainable, bool):
            raise CheckpointError(f"{path}: params.stitch.trainable must be a boolean")
        width = dims[stitch_index]
        stitch = _layer(entry, width, width, "none", trainable, f"{path}: params.stitch")
    return Network(blocks=blocks, stitch=stitch, stitch_index=stitch_index)


def _numeric_fields(entries: dict, section: str, types, cast, path) -> Dict[str, Any]:
    out = {}
    for key, value in entries.items():
        if isinstance(value, bool) or not isinstance(value, types):
            raise CheckpointError(f"{path}: {section}.{key} must be numeric, got {value!r}")
        out[key] = cast(value)
    return out


def load_checkpoint(path) -> Checkpoint:
    """Read and fully validate a checkpoint; nothing is returned unless every field checks out."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable or truncated checkpoint ({e})") from e
    if not isinstance(data, dict):
        raise CheckpointError(f"{path}: top level must be an object")
    version = data.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}, expected {FORMAT_VERSION}")

    network = network_from_dict(data, path)
    optimizer = _require(data, "optimizer", dict, path)
    seeds = _require(data, "seeds", dict, path)
    meta = CheckpointMeta(
        phase=_require(data, "phase", str, path),
        epoch=_require(data, "epoch", int, path),
        optimizer=_numeric_fields(optimizer, "optimizer", (int, float), float, path),
        seeds=_numeric_fields(seeds, "seeds", int, int, path),
    )
    return Checkpoint(network, meta, version, str(path))
