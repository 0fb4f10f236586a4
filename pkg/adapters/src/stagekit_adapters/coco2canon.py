"""Convert a COCO results list into a canonical prediction file.

Inputs are the standard COCO detection results (xywh boxes, optional RLE
segmentations, compressed or not) plus the image-info list giving each
image's pixel size; the latter may be a bare list or a full COCO dataset
file with an ``images`` key. Box conversion is pure corner arithmetic.
Boxes poking past the frame are clipped, and results that end up with no
area inside the frame are dropped; both cases are recorded as warnings in
the conversion manifest.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from .cocorle import decode_counts_string
from .common import AdapterError, ConversionManifest, emit_validated, load_json, run_main


def xywh_to_corners(x, y, w, h) -> tuple[float, float, float, float]:
    if w < 0 or h < 0:
        raise AdapterError(f"box [{x}, {y}, {w}, {h}] has negative width or height")
    return (float(x), float(y), float(x) + float(w), float(y) + float(h))


def _image_table(obj) -> list[dict]:
    if isinstance(obj, dict) and "images" in obj:
        obj = obj["images"]
    if not isinstance(obj, list):
        raise AdapterError("image info must be a list of images or an object with an 'images' key")
    images = []
    seen = set()
    for i, rec in enumerate(obj):
        if not isinstance(rec, dict) or not {"id", "width", "height"} <= set(rec):
            raise AdapterError(f"images[{i}]: needs id, width, and height")
        if rec["id"] in seen:
            raise AdapterError(f"images[{i}]: duplicate image id {rec['id']!r}")
        seen.add(rec["id"])
        images.append({"id": rec["id"], "width": rec["width"], "height": rec["height"]})
    return images


def _convert_segmentation(seg, frame, where) -> dict:
    if not isinstance(seg, dict) or "counts" not in seg or "size" not in seg:
        raise AdapterError(f"{where}: segmentation must be RLE with size and counts (polygons are not supported)")
    size = seg["size"]
    if not (isinstance(size, list) and len(size) == 2):
        raise AdapterError(f"{where}: segmentation size must be [height, width]")
    height, width = size
    if (width, height) != frame:
        raise AdapterError(
            f"{where}: segmentation size {width}x{height} does not match the {frame[0]}x{frame[1]} image"
        )
    counts = seg["counts"]
    if isinstance(counts, str):
        try:
            counts = decode_counts_string(counts)
        except ValueError as exc:
            raise AdapterError(f"{where}: {exc}") from exc
    if not (isinstance(counts, list) and all(isinstance(c, int) and c >= 0 for c in counts)):
        raise AdapterError(f"{where}: segmentation counts must be a string or a list of non-negative integers")
    if sum(counts) != width * height:
        raise AdapterError(
            f"{where}: segmentation counts sum to {sum(counts)}, expected {width}x{height} = {width * height}"
        )
    return {"size": [height, width], "runs": counts}


def convert_coco_results(results, image_info, source_id: str) -> tuple[dict, list[str]]:
    """Pure conversion: (canonical prediction object, warnings)."""
    images = _image_table(image_info)
    frames = {rec["id"]: (rec["width"], rec["height"]) for rec in images}
    if not isinstance(results, list):
        raise AdapterError("results must be a list of detection records")
    detections = []
    warnings = []
    for i, rec in enumerate(results):
        where = f"results[{i}]"
        if not isinstance(rec, dict) or not {"image_id", "category_id", "bbox", "score"} <= set(rec):
            raise AdapterError(f"{where}: needs image_id, category_id, bbox, and score")
        image_id = rec["image_id"]
        frame = frames.get(image_id)
        if frame is None:
            raise AdapterError(f"{where}: unknown image id {image_id!r}")
        bbox = rec["bbox"]
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise AdapterError(f"{where}: bbox must be [x, y, width, height]")
        x1, y1, x2, y2 = xywh_to_corners(*bbox)
        cx1, cy1 = max(x1, 0.0), max(y1, 0.0)
        cx2, cy2 = min(x2, float(frame[0])), min(y2, float(frame[1]))
        if cx1 >= cx2 or cy1 >= cy2:
            warnings.append(f"{where}: dropped, no area inside the {frame[0]}x{frame[1]} frame")
            continue
        if (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2):
            warnings.append(f"{where}: box [{x1}, {y1}, {x2}, {y2}] clipped to the {frame[0]}x{frame[1]} frame")
        out = {
            "image_id": image_id,
            "category_id": rec["category_id"],
            "score": rec["score"],
            "bbox": [cx1, cy1, cx2, cy2],
            "source_id": source_id,
        }
        if rec.get("segmentation") is not None:
            out["mask"] = _convert_segmentation(rec["segmentation"], frame, where)
        detections.append(out)
    return {"images": images, "detections": detections}, warnings


def convert(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="coco2canon", description="convert COCO detection results to a canonical prediction file"
    )
    parser.add_argument("--results", required=True, help="COCO results list (JSON)")
    parser.add_argument("--images", required=True, help="image info: COCO dataset file or bare images list")
    parser.add_argument("--out", required=True, help="output prediction file")
    parser.add_argument("--source-id", default="coco", help="source tag for the converted detections")
    args = parser.parse_args(argv)

    results = load_json(args.results)
    image_info = load_json(args.images)
    obj, warnings = convert_coco_results(results, image_info, args.source_id)
    manifest = ConversionManifest(
        source_format="coco-results",
        input_path=str(Path(args.results)),
        output_path=str(Path(args.out)),
        counts={"images": len(obj["images"]), "detections": len(obj["detections"])},
        warnings=warnings,
    )
    blob = (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
    emit_validated(Path(args.out), blob, "pred", manifest)


def main(argv=None) -> int:
    return run_main(convert, argv)


if __name__ == "__main__":
    raise SystemExit(main())
