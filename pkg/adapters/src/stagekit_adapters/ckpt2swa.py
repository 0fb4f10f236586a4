"""Convert a framework checkpoint into a tensor-archive file.

Loads a checkpoint (a state dict, or a wrapper object holding one under
``state_dict`` or ``model``) and exports its floating-point tensors as
float32, sorted by name. Half and bfloat16 tensors widen exactly; float64
narrows with a warning. Tensors the archive cannot hold (non-float dtypes,
zero-element shapes) are skipped with a warning, or rejected outright
under ``--strict``. Entries whose names mark them as normalization
buffers rather than learned weights are flagged in the manifest.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from .common import AdapterError, ConversionManifest, InputError, emit_validated, run_main
from .swaformat import write_archive_blob

BUFFER_SUFFIXES = ("running_mean", "running_var", "num_batches_tracked")


def _load_state_dict(path: Path):
    import torch

    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    except Exception as exc:
        raise InputError(f"{path}: cannot load checkpoint: {exc}") from exc
    for key in ("state_dict", "model"):
        if isinstance(obj, dict) and isinstance(obj.get(key), dict):
            obj = obj[key]
            break
    if not isinstance(obj, dict) or not obj:
        raise AdapterError(f"{path}: no state dict found in checkpoint")
    return obj


def convert_state_dict(state_dict, strict: bool = False):
    """(entries sorted by name, warnings); entries are (name, shape, f32 array)."""
    import torch

    entries = []
    warnings = []
    for name in sorted(state_dict):
        value = state_dict[name]
        if not isinstance(value, torch.Tensor):
            message = f"{name}: not a tensor ({type(value).__name__}), skipped"
            if strict:
                raise AdapterError(message)
            warnings.append(message)
            continue
        if not value.is_floating_point():
            message = f"{name}: unsupported dtype {value.dtype}, skipped"
            if strict:
                raise AdapterError(message)
            warnings.append(message)
            continue
        if value.numel() == 0:
            message = f"{name}: zero-element tensor, skipped"
            if strict:
                raise AdapterError(message)
            warnings.append(message)
            continue
        if value.dtype in (torch.float16, torch.bfloat16):
            warnings.append(f"{name}: widened {value.dtype} to float32")
        elif value.dtype == torch.float64:
            warnings.append(f"{name}: narrowed float64 to float32 (precision loss)")
        if name.rsplit(".", 1)[-1] in BUFFER_SUFFIXES:
            warnings.append(f"{name}: normalization buffer, not a learned weight")
        data = value.detach().to(torch.float32).cpu().contiguous().numpy()
        entries.append((name, tuple(value.shape), data))
    if not entries:
        raise AdapterError("checkpoint holds no exportable floating-point tensors")
    return entries, warnings


def convert(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="ckpt2swa", description="export a checkpoint's float tensors to a tensor archive"
    )
    parser.add_argument("--ckpt", required=True, help="checkpoint file")
    parser.add_argument("--out", required=True, help="output archive file")
    parser.add_argument(
        "--strict", action="store_true", help="fail on any tensor the archive cannot hold"
    )
    args = parser.parse_args(argv)

    state_dict = _load_state_dict(Path(args.ckpt))
    entries, warnings = convert_state_dict(state_dict, strict=args.strict)
    manifest = ConversionManifest(
        source_format="torch-checkpoint",
        input_path=str(Path(args.ckpt)),
        output_path=str(Path(args.out)),
        counts={"tensors": len(entries)},
        warnings=warnings,
    )
    emit_validated(Path(args.out), write_archive_blob(entries), "swa", manifest)


def main(argv=None) -> int:
    return run_main(convert, argv)


if __name__ == "__main__":
    raise SystemExit(main())
