"""Checkpoint weight averaging over flat tensor archives.

Archives hold named 32-bit float tensors in a minimal binary container, so
averaging is bit-exactly testable and framework checkpoints stay out of the
dependency tree (converters live elsewhere). Averaging accumulates in 64-bit
and rounds once to 32-bit, which keeps the result independent of archive
order to the last unit of precision.

File format, byte for byte:

    magic b"SWA1"
    8-byte little-endian unsigned header byte length
    header: UTF-8 JSON list of {"name", "shape", "offset", "length"}
    payload: little-endian float32 data; offset/length are payload-relative
    byte positions
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ParseError, ValidationError, Violation, atomic_write_bytes

__all__ = [
    "TensorEntry",
    "TensorArchive",
    "read_archive",
    "write_archive",
    "average_archives",
]

_MAGIC = b"SWA1"
_ENTRY_KEYS = {"name", "shape", "offset", "length"}


@dataclass(frozen=True, eq=False)
class TensorEntry:
    """One named tensor: a shape and its flat float32 data, row-major."""

    name: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError(f"tensor name must be a non-empty string, got {self.name!r}")
        shape = tuple(self.shape)
        if any(not isinstance(d, int) or isinstance(d, bool) or d < 1 for d in shape):
            raise ValidationError(f"tensor {self.name!r}: shape dims must be positive integers, got {shape}")
        object.__setattr__(self, "shape", shape)
        data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        expected = math.prod(shape)
        if len(data) != expected:
            raise ValidationError(
                f"tensor {self.name!r}: shape {list(shape)} implies {expected} elements, got {len(data)}"
            )
        if not np.isfinite(data).all():
            raise ValidationError(f"tensor {self.name!r}: data contains non-finite values")

    def __eq__(self, other):
        if not isinstance(other, TensorEntry):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True, eq=False)
class TensorArchive:
    """Ordered collection of uniquely named tensors."""

    entries: tuple[TensorEntry, ...] = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.name in seen:
                raise ValidationError(f"duplicate tensor name {e.name!r}")
            seen.add(e.name)

    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def get(self, name: str) -> TensorEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, TensorArchive):
            return NotImplemented
        return self.entries == other.entries


def read_archive(path) -> TensorArchive:
    """Parse and fully validate an archive file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise ParseError(f"{path}: not a tensor archive (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    if 12 + header_len > len(blob):
        raise ParseError(f"{path}: truncated header ({header_len} bytes declared)")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: malformed archive header: {exc}") from exc
    if not isinstance(header, list):
        raise ParseError(f"{path}: archive header must be a JSON list")

    payload = blob[12 + header_len :]
    violations: list[Violation] = []
    entries: list[TensorEntry] = []
    seen: set[str] = set()
    for i, rec in enumerate(header):
        where = f"entry[{i}]"
        if not isinstance(rec, dict) or set(rec) != _ENTRY_KEYS:
            violations.append(Violation(where, "must be an object with keys name, shape, offset, length"))
            continue
        name, shape, offset, length = rec["name"], rec["shape"], rec["offset"], rec["length"]
        if not isinstance(name, str) or not name:
            violations.append(Violation(where, f"name must be a non-empty string, got {name!r}"))
            continue
        where = f"tensor {name!r}"
        if name in seen:
            violations.append(Violation(where, "duplicate tensor name"))
            continue
        seen.add(name)
        if not (
            isinstance(shape, list)
            and all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in shape)
        ):
            violations.append(Violation(where, f"shape must be a list of positive integers, got {shape}"))
            continue
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in (offset, length)):
            violations.append(Violation(where, f"offset/length must be non-negative integers, got {offset}/{length}"))
            continue
        expected = 4 * math.prod(shape)
        if length != expected:
            violations.append(
                Violation(where, f"length {length} does not match shape {shape} ({expected} bytes expected)")
            )
            continue
        if offset + length > len(payload):
            violations.append(
                Violation(where, f"payload truncated: needs bytes [{offset}, {offset + length}), have {len(payload)}")
            )
            continue
        data = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=offset)
        if not np.isfinite(data).all():
            violations.append(Violation(where, "data contains non-finite values"))
            continue
        entries.append(TensorEntry(name=name, shape=tuple(shape), data=data))
    if violations:
        raise ValidationError(f"{path}: invalid tensor archive", violations)
    return TensorArchive(entries=tuple(entries))


def write_archive(archive: TensorArchive, path) -> None:
    """Write an archive; reading it back yields a bit-identical archive."""
    header = []
    chunks = []
    offset = 0
    for e in archive.entries:
        raw = np.ascontiguousarray(e.data, dtype="<f4").tobytes()
        header.append({"name": e.name, "shape": list(e.shape), "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    blob = _MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(chunks)
    atomic_write_bytes(path, blob)


def average_archives(archives: Sequence[TensorArchive]) -> TensorArchive:
    """Elementwise mean across archives, 64-bit accumulation, 32-bit result.

    All archives must agree on tensor names and shapes; the output keeps the
    first archive's entry order.
    """
    if not archives:
        raise ValidationError("need at least one archive to average")
    first = archives[0]
    base_names = set(first.names())
    for idx, other in enumerate(archives[1:], start=1):
        other_names = set(other.names())
        if other_names != base_names:
            missing = sorted(base_names - other_names)
            extra = sorted(other_names - base_names)
            raise ValidationError(
                f"archive {idx} tensor names differ: missing {missing}, unexpected {extra}"
            )
        for e in first.entries:
            theirs = other.get(e.name)
            if theirs.shape != e.shape:
                raise ValidationError(
                    f"tensor {e.name!r}: shape {list(theirs.shape)} in archive {idx} "
                    f"does not match {list(e.shape)}"
                )
    out = []
    k = len(archives)
    for e in first.entries:
        acc = np.zeros(len(e.data), dtype=np.float64)
        for a in archives:
            acc += a.get(e.name).data
        out.append(TensorEntry(name=e.name, shape=e.shape, data=(acc / k).astype(np.float32)))
    return TensorArchive(entries=tuple(out))
