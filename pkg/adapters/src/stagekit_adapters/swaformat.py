"""Reader and writer for the toolkit's tensor-archive file format.

Layout: 4-byte magic ``SWA1``, an unsigned little-endian 64-bit header
length, a compact JSON list of ``{name, shape, offset, length}`` entries,
then the payload: each tensor's little-endian float32 data at its offset,
packed back to back. This module implements the documented layout
directly; it shares no code with the toolkit.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .common import InputError

MAGIC = b"SWA1"


def write_archive_blob(entries: list[tuple[str, tuple[int, ...], np.ndarray]]) -> bytes:
    header = []
    chunks = []
    offset = 0
    for name, shape, data in entries:
        raw = np.ascontiguousarray(data.reshape(-1), dtype="<f4").tobytes()
        header.append({"name": name, "shape": list(shape), "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)


def read_archive_file(path) -> dict[str, np.ndarray]:
    """Name -> float32 ndarray (shaped); minimal checks, reading only."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise InputError(f"{path}: not a tensor archive")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    payload = blob[12 + header_len :]
    tensors = {}
    for rec in header:
        shape = tuple(rec["shape"])
        count = math.prod(shape)
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=rec["offset"])
        tensors[rec["name"]] = data.reshape(shape)
    return tensors
