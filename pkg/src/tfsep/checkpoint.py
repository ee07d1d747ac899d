"""Checkpoint files: a JSON header line plus raw float64 payloads.

Layout:

    {"format": "tfsep.checkpoint", "version": 1, "arrays": [...], "meta": {...}}\n
    <little-endian float64 bytes for each array, C order, in header order>

The header is rendered with sorted keys and no whitespace, and the payload
is raw bytes, so writing the same arrays and meta twice produces identical
files byte for byte.  (A zip container would not: it embeds timestamps.)
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "tfsep.checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays plus a JSON-serialisable meta dict."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        # note: ascontiguousarray would promote 0-d arrays to 1-d and lose
        # the shape; tobytes() already serialises any layout in C order.
        a = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.astype("<f8", copy=False).tobytes())
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "arrays": entries,
        "meta": meta if meta is not None else {},
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(line)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, meta).  Raises CheckpointError on malformed files."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: not a checkpoint file ({exc})") from exc
        if header.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: unexpected format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        tail = fh.read(1)
        if tail:
            raise CheckpointError(f"{path}: trailing bytes after declared arrays")
    return arrays, header.get("meta", {})
