"""Checkpoint serialization shared by every trainable network.

Binary layout: magic ``CDTW``, version (u32 LE), header length (u32 LE), a
UTF-8 text header, then the raw little-endian float64 tensor payloads in
header order.  The header carries one ``meta <key> <json>`` line per metadata
entry and one ``tensor <name> <json shape>`` line per tensor; float64 payloads
round-trip bit-exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CDTW"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or unreadable checkpoint file."""


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    meta: Mapping[str, object] | None = None,
) -> None:
    path = Path(path)
    names = sorted(tensors)
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"meta {key} {json.dumps((meta or {})[key], sort_keys=True)}")
    for name in names:
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"tensor name may not contain whitespace: {name!r}")
        shape = list(np.asarray(tensors[name]).shape)
        lines.append(f"tensor {name} {json.dumps(shape)}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for name in names:
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, object]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = fh.read(header_len).decode("utf-8")
        meta: dict[str, object] = {}
        specs: list[tuple[str, tuple[int, ...]]] = []
        for line in header.splitlines():
            if not line.strip():
                continue
            kind, name, payload = line.split(" ", 2)
            if kind == "meta":
                meta[name] = json.loads(payload)
            elif kind == "tensor":
                specs.append((name, tuple(json.loads(payload))))
            else:
                raise CheckpointError(f"{path}: unknown header line kind {kind!r}")
        tensors: dict[str, np.ndarray] = {}
        for name, shape in specs:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return tensors, meta
