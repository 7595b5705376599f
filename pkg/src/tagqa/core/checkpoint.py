"""Sectioned binary parameter checkpoints.

Layout::

    TAGQA-CKPT 1\\n
    <header byte length>\\n
    <JSON header: meta + [{name, shape, offset}]>
    <float64 little-endian payload, parameters in header order>

The header is serialized with sorted keys, so identical parameters and
metadata always produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TAGQA-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"meta": meta or {}, "params": entries}, sort_keys=True, separators=(",", ":")
    ).encode()
    return MAGIC + f"{len(header)}\n".encode() + header + b"".join(blobs)


def loads_checkpoint(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a tagqa checkpoint (bad magic line)")
    rest = raw[len(MAGIC):]
    try:
        nl = rest.index(b"\n")
        hlen = int(rest[:nl])
        header = json.loads(rest[nl + 1 : nl + 1 + hlen])
        entries, meta = header["params"], header["meta"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from None
    payload = rest[nl + 1 + hlen :]
    params = {}
    for e in entries:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        stop = start + 8 * count
        if stop > len(payload):
            raise CheckpointError(f"truncated payload for parameter {e['name']!r}")
        arr = np.frombuffer(payload[start:stop], dtype="<f8").reshape(e["shape"])
        params[e["name"]] = arr.astype(np.float64, copy=True)
    return params, meta


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(params, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads_checkpoint(Path(path).read_bytes())
