"""Convert a per-image score table into a canonical classification file.

The table is CSV: first column the image id, remaining columns one score
per class. A header row is detected automatically (any non-numeric score
cell) and its class-column names are carried into the output. Rows are
probabilities by default and must sum to 1; with ``--logits`` each row is
passed through a softmax instead.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
from pathlib import Path

from .common import AdapterError, ConversionManifest, InputError, emit_validated, run_main


def softmax(row: list[float]) -> list[float]:
    peak = max(row)
    exps = [math.exp(v - peak) for v in row]
    total = sum(exps)
    return [v / total for v in exps]


def _parse_image_id(cell: str):
    try:
        return int(cell)
    except ValueError:
        return cell


def _read_table(path: Path) -> tuple[list[str] | None, list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise AdapterError(f"{path}: empty table")
    try:
        [float(cell) for cell in rows[0][1:]]
        header = None
    except ValueError:
        header = rows[0]
        rows = rows[1:]
    if not rows:
        raise AdapterError(f"{path}: table has a header but no data rows")
    return header, rows


def convert_table(header, rows, logits: bool) -> dict:
    classes = header[1:] if header else None
    arity = len(rows[0]) - 1
    if arity < 2:
        raise AdapterError("each row needs an image id and at least two class scores")
    outputs = []
    for i, row in enumerate(rows):
        where = f"row {i + 1}"
        if len(row) - 1 != arity:
            raise AdapterError(f"{where}: expected {arity} scores, got {len(row) - 1}")
        try:
            values = [float(cell) for cell in row[1:]]
        except ValueError as exc:
            raise AdapterError(f"{where}: non-numeric score: {exc}") from exc
        if logits:
            probs = softmax(values)
        else:
            total = sum(values)
            if not math.isclose(total, 1.0, abs_tol=1e-6):
                raise AdapterError(
                    f"{where}: probabilities sum to {total}, not 1 (pass --logits for raw scores)"
                )
            probs = values
        outputs.append({"image_id": _parse_image_id(row[0]), "probs": probs})
    obj: dict = {}
    if classes is not None:
        obj["classes"] = classes
    obj["outputs"] = outputs
    return obj


def convert(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="cls2canon", description="convert a score table to a canonical classification file"
    )
    parser.add_argument("--table", required=True, help="CSV table: image_id, then one column per class")
    parser.add_argument("--out", required=True, help="output classification file")
    parser.add_argument("--logits", action="store_true", help="rows are logits; apply softmax")
    args = parser.parse_args(argv)

    header, rows = _read_table(Path(args.table))
    obj = convert_table(header, rows, args.logits)
    manifest = ConversionManifest(
        source_format="logits-table" if args.logits else "probs-table",
        input_path=str(Path(args.table)),
        output_path=str(Path(args.out)),
        counts={"images": len(obj["outputs"])},
    )
    blob = (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
    emit_validated(Path(args.out), blob, "cls", manifest)


def main(argv=None) -> int:
    return run_main(convert, argv)


if __name__ == "__main__":
    raise SystemExit(main())
