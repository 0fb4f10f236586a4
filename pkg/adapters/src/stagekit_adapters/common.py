"""Shared plumbing: errors, atomic output, primary-CLI validation, manifests."""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path


class AdapterError(Exception):
    """Conversion failed; the message is user-facing."""


class InputError(AdapterError):
    """The input file is missing or unparseable."""


@dataclass
class ConversionManifest:
    source_format: str
    input_path: str
    output_path: str
    counts: dict
    warnings: list = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "source_format": self.source_format,
            "input": self.input_path,
            "output": self.output_path,
            "counts": self.counts,
            "warnings": list(self.warnings),
        }


def atomic_write_bytes(path: Path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def toolkit_command() -> list[str]:
    """Locate the primary toolkit CLI; STAGEKIT_CLI overrides the search."""
    override = os.environ.get("STAGEKIT_CLI")
    if override:
        return override.split()
    exe = shutil.which("stagekit")
    if exe:
        return [exe]
    return [sys.executable, "-m", "stagekit"]


def validate_with_toolkit(path: Path, kind: str) -> None:
    """Run ``stagekit validate`` on the file; raise on any violation."""
    cmd = toolkit_command() + ["validate", str(path), "--kind", kind]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except OSError as exc:
        raise AdapterError(f"cannot run the toolkit CLI ({cmd[0]}): {exc}") from exc
    if proc.returncode != 0:
        detail = (proc.stderr or proc.stdout).strip()
        raise AdapterError(f"converted file failed toolkit validation:\n{detail}")


def emit_validated(path: Path, blob: bytes, kind: str, manifest: ConversionManifest) -> None:
    """Write the converted file plus its manifest, validating first.

    The payload is staged under a temporary name, checked by the toolkit's
    ``validate`` command, and only then renamed into place, so a failing
    conversion leaves no output behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".staged")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        validate_with_toolkit(Path(tmp), kind)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    manifest_path = path.with_name(path.name + ".manifest.json")
    atomic_write_bytes(
        manifest_path, (json.dumps(manifest.to_json_obj(), indent=2, sort_keys=True) + "\n").encode()
    )


def run_main(convert, argv=None) -> int:
    """Uniform exit-code wrapper for the converter entry points."""
    try:
        convert(argv)
        return 0
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except AdapterError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
