"""Acceptance gate for the adapters: the round-trip contract.

Converted files must pass the toolkit's own validation with zero
violations, box conversion must agree with corner arithmetic, and
checkpoints exported then averaged through the toolkit CLI must match
averaging done in the source framework.
"""

import json
import random
import subprocess

import numpy as np
import torch

from stagekit_adapters.cls2canon import main as cls_main
from stagekit_adapters.coco2canon import main as coco_main, xywh_to_corners
from stagekit_adapters.cocorle import encode_counts_string
from stagekit_adapters.ckpt2swa import main as ckpt_main
from stagekit_adapters.common import toolkit_command
from stagekit_adapters.swaformat import read_archive_file


def toolkit_validate(path, kind):
    return subprocess.run(
        toolkit_command() + ["validate", str(path), "--kind", kind],
        capture_output=True,
        text=True,
    )


def test_converted_coco_fixtures_pass_primary_validation(tmp_path):
    rng = random.Random(11)
    images = [{"id": i, "width": 64, "height": 48} for i in range(1, 6)]
    results = []
    for _ in range(40):
        image_id = rng.randrange(1, 6)
        x = rng.uniform(0, 50)
        y = rng.uniform(0, 38)
        results.append(
            {
                "image_id": image_id,
                "category_id": rng.randrange(1, 4),
                "bbox": [x, y, rng.uniform(0.5, 20), rng.uniform(0.5, 16)],
                "score": rng.random(),
            }
        )
    # one masked detection per encoding flavor
    runs = [100, 5, 64 * 48 - 110, 5]
    results.append(
        {
            "image_id": 1,
            "category_id": 1,
            "bbox": [0, 0, 10, 10],
            "score": 0.5,
            "segmentation": {"size": [48, 64], "counts": runs},
        }
    )
    results.append(
        {
            "image_id": 2,
            "category_id": 1,
            "bbox": [0, 0, 10, 10],
            "score": 0.5,
            "segmentation": {"size": [48, 64], "counts": encode_counts_string(runs)},
        }
    )
    (tmp_path / "results.json").write_text(json.dumps(results), encoding="utf-8")
    (tmp_path / "images.json").write_text(json.dumps({"images": images}), encoding="utf-8")
    out = tmp_path / "pred.json"
    assert (
        coco_main(
            ["--results", str(tmp_path / "results.json"), "--images", str(tmp_path / "images.json"), "--out", str(out)]
        )
        == 0
    )
    proc = toolkit_validate(out, "pred")
    assert proc.returncode == 0, proc.stderr

    table = tmp_path / "scores.csv"
    table.write_text("image_id,bleeding,healthy\n" + "".join(f"{i},{i}.0,0\n" for i in range(1, 6)), encoding="utf-8")
    cls_out = tmp_path / "cls.json"
    assert cls_main(["--table", str(table), "--out", str(cls_out), "--logits"]) == 0
    proc = toolkit_validate(cls_out, "cls")
    assert proc.returncode == 0, proc.stderr
    print("ACCEPTANCE PASS: converted COCO and table fixtures validate cleanly")


def test_xywh_conversion_matches_corner_arithmetic():
    rng = random.Random(23)
    for _ in range(100):
        x = rng.uniform(-50, 500)
        y = rng.uniform(-50, 500)
        w = rng.uniform(0, 300)
        h = rng.uniform(0, 300)
        assert xywh_to_corners(x, y, w, h) == (x, y, x + w, y + h)
    print("ACCEPTANCE PASS: xywh conversion is exact corner arithmetic on 100 boxes")


def test_converted_checkpoints_average_like_the_framework(tmp_path):
    torch.manual_seed(5)
    shapes = {"backbone.conv.weight": (8, 3, 3, 3), "head.fc.weight": (4, 128), "head.fc.bias": (4,)}
    states = []
    for run in range(2):
        state = {name: torch.randn(shape) * 4 for name, shape in shapes.items()}
        torch.save({"state_dict": state}, tmp_path / f"ckpt{run}.pth")
        states.append(state)
        assert (
            ckpt_main(["--ckpt", str(tmp_path / f"ckpt{run}.pth"), "--out", str(tmp_path / f"ckpt{run}.swa")]) == 0
        )
    averaged = tmp_path / "avg.swa"
    proc = subprocess.run(
        toolkit_command()
        + ["swa-average", str(tmp_path / "ckpt0.swa"), str(tmp_path / "ckpt1.swa"), "--out", str(averaged)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    tensors = read_archive_file(averaged)
    assert set(tensors) == set(shapes)
    for name, shape in shapes.items():
        framework_mean = torch.mean(torch.stack([states[0][name], states[1][name]]), dim=0)
        gap = np.max(np.abs(tensors[name] - framework_mean.numpy()))
        assert tensors[name].shape == shape
        assert gap < 1e-6, f"{name}: max gap {gap}"
    print("ACCEPTANCE PASS: toolkit-averaged checkpoints match framework averaging within 1e-6")
