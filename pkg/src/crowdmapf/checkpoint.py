"""Deterministic binary checkpoint container.

Layout: magic, little-endian uint64 header length, canonical JSON header
(versioned, sorted keys, includes the parameter layout and optional
curriculum/meta payloads), then the raw little-endian float64 parameter
bytes. Two saves of identical content produce identical files, which the
training determinism guarantee relies on (zip-based formats embed
timestamps and were rejected for that reason).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .policy import LAYOUT, PARAM_COUNT, PolicyParams

MAGIC = b"CMPF\x01\n"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: PolicyParams, curriculum: dict | None = None,
                    meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "param_count": PARAM_COUNT,
        "layout": [[name, list(shape)] for name, shape in LAYOUT],
        "curriculum": curriculum,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(params.flat, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[PolicyParams, dict | None, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        if header.get("param_count") != PARAM_COUNT:
            raise ValueError(
                f"parameter count mismatch: file has {header.get('param_count')}, "
                f"code expects {PARAM_COUNT}"
            )
        raw = fh.read(PARAM_COUNT * 8)
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return PolicyParams(flat), header.get("curriculum"), header.get("meta", {})
