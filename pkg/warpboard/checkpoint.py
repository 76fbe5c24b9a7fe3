"""Single-file checkpoint container of named arrays.

Layout (little endian)::

    b"WBCK"                 magic
    uint32                  format version
    uint64                  header length in bytes
    header                  UTF-8 JSON, sorted keys, no whitespace:
                            {"entries": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
                             "metadata": {...}, "state": <skeleton>}
    data                    raw array bytes, entries back to back, offsets from here

``state`` is any nesting of dicts, lists, scalars and tensors; tensors are
stored as entries and replaced in the skeleton by ``{"__tensor__": name}``.
Dicts with non-string keys (optimizer states) become ``{"__items__": [[k, v], ...]}``.
Saving the result of a load produces the same bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
import logging
from pathlib import Path
import struct
from typing import Any

import numpy as np
import torch

logger = logging.getLogger(__name__)

MAGIC = b"WBCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    state: dict[str, Any]
    metadata: dict[str, Any]


def _split(obj: Any, name: str, arrays: dict[str, np.ndarray]) -> Any:
    if isinstance(obj, torch.Tensor):
        arrays[name] = obj.detach().cpu().numpy()
        return {"__tensor__": name}
    if isinstance(obj, np.ndarray):
        arrays[name] = obj
        return {"__tensor__": name}
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: _split(v, f"{name}.{k}", arrays) for k, v in obj.items()}
        return {"__items__": [[k, _split(v, f"{name}.{k}", arrays)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return [_split(v, f"{name}.{i}", arrays) for i, v in enumerate(obj)]
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    return obj


def _join(obj: Any, arrays: dict[str, np.ndarray]) -> Any:
    if isinstance(obj, dict):
        if set(obj) == {"__tensor__"}:
            return torch.from_numpy(arrays[obj["__tensor__"]].copy())
        if set(obj) == {"__items__"}:
            return {k: _join(v, arrays) for k, v in obj["__items__"]}
        return {k: _join(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_join(v, arrays) for v in obj]
    return obj


def _little_endian(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def to_bytes(state: dict[str, Any], metadata: dict[str, Any] | None = None) -> bytes:
    arrays: dict[str, np.ndarray] = {}
    skeleton = _split(state, "state", arrays)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = _little_endian(arrays[name])
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"entries": entries, "metadata": metadata or {}, "state": skeleton},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def from_bytes(raw: bytes) -> Checkpoint:
    if len(raw) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint: missing header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + header_len
    if len(raw) < start:
        raise CheckpointError("truncated checkpoint: header cut short")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc

    try:
        arrays = {}
        for entry in header["entries"]:
            lo = start + entry["offset"]
            hi = lo + entry["nbytes"]
            if hi > len(raw):
                raise CheckpointError(f"truncated checkpoint: entry {entry['name']} runs past the end")
            dtype = np.dtype(entry["dtype"])
            arrays[entry["name"]] = np.frombuffer(raw[lo:hi], dtype=dtype).reshape(entry["shape"])
        return Checkpoint(_join(header["state"], arrays), header["metadata"])
    except CheckpointError:
        raise
    except (KeyError, IndexError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc!r}") from exc


def save_checkpoint(path: str | Path, state: dict[str, Any], metadata: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(state, metadata))
    logger.info("saved checkpoint %s", path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())


__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "Checkpoint",
    "to_bytes",
    "from_bytes",
    "save_checkpoint",
    "load_checkpoint",
]
