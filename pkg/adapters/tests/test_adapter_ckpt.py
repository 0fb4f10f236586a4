"""Tests for the checkpoint exporter."""

import json
import struct

import pytest
import torch

from stagekit_adapters.ckpt2swa import convert_state_dict, main
from stagekit_adapters.common import AdapterError
from stagekit_adapters.swaformat import read_archive_file


def save_ckpt(tmp_path, obj, name="model.pth"):
    path = tmp_path / name
    torch.save(obj, path)
    return path


def header_names(path):
    blob = path.read_bytes()
    (header_len,) = struct.unpack("<Q", blob[4:12])
    return [rec["name"] for rec in json.loads(blob[12 : 12 + header_len])]


def test_single_f32_tensor_preserved():
    weight = torch.arange(6, dtype=torch.float32).reshape(2, 3)
    entries, warnings = convert_state_dict({"w": weight})
    [(name, shape, data)] = entries
    assert name == "w" and shape == (2, 3)
    assert data.tolist() == weight.numpy().tolist()
    assert warnings == []


def test_f16_widened_exactly_with_warning():
    half = torch.tensor([0.5, 1.25, -3.0], dtype=torch.float16)
    entries, warnings = convert_state_dict({"w": half})
    assert entries[0][2].tolist() == half.float().numpy().tolist()
    assert any("widened" in w for w in warnings)


def test_bf16_widened_with_warning():
    entries, warnings = convert_state_dict({"w": torch.tensor([1.5], dtype=torch.bfloat16)})
    assert entries[0][2].tolist() == [1.5]
    assert any("widened" in w for w in warnings)


def test_f64_narrowed_with_warning():
    entries, warnings = convert_state_dict({"w": torch.tensor([0.1], dtype=torch.float64)})
    assert any("narrowed" in w for w in warnings)


def test_int_tensor_skipped_with_warning():
    entries, warnings = convert_state_dict(
        {"w": torch.ones(2), "steps": torch.tensor([3], dtype=torch.int64)}
    )
    assert [e[0] for e in entries] == ["w"]
    assert any("steps" in w and "skipped" in w for w in warnings)


def test_strict_mode_fails_on_skipped_tensor():
    with pytest.raises(AdapterError, match="steps"):
        convert_state_dict({"w": torch.ones(2), "steps": torch.tensor([3])}, strict=True)


def test_zero_element_tensor_skipped():
    entries, warnings = convert_state_dict({"w": torch.ones(2), "empty": torch.zeros(0)})
    assert [e[0] for e in entries] == ["w"]
    assert any("zero-element" in w for w in warnings)


def test_scalar_tensor_kept():
    entries, _ = convert_state_dict({"scale": torch.tensor(2.5)})
    assert entries[0][1] == ()
    assert entries[0][2].tolist() == 2.5


def test_buffer_names_flagged():
    state = {"bn.running_mean": torch.zeros(4), "bn.weight": torch.ones(4)}
    _, warnings = convert_state_dict(state)
    assert any("running_mean" in w and "buffer" in w for w in warnings)


def test_all_tensors_unexportable_is_an_error():
    with pytest.raises(AdapterError, match="no exportable"):
        convert_state_dict({"steps": torch.tensor([1, 2])})


def test_entries_sorted_by_name():
    state = {"z": torch.ones(1), "a": torch.ones(1), "m": torch.ones(1)}
    entries, _ = convert_state_dict(state)
    assert [e[0] for e in entries] == ["a", "m", "z"]


# command line


def test_cli_exports_state_dict_wrapper(tmp_path):
    ckpt = save_ckpt(
        tmp_path,
        {"state_dict": {"w": torch.tensor([1.0, 2.0]), "b": torch.tensor([0.5])}, "meta": {}},
    )
    out = tmp_path / "model.swa"
    assert main(["--ckpt", str(ckpt), "--out", str(out)]) == 0
    tensors = read_archive_file(out)
    assert tensors["w"].tolist() == [1.0, 2.0]
    assert tensors["b"].tolist() == [0.5]
    assert header_names(out) == ["b", "w"]
    manifest = json.loads((tmp_path / "model.swa.manifest.json").read_text(encoding="utf-8"))
    assert manifest["counts"] == {"tensors": 2}


def test_cli_accepts_model_wrapper_and_bare_dict(tmp_path):
    bare = save_ckpt(tmp_path, {"w": torch.ones(3)}, "bare.pth")
    wrapped = save_ckpt(tmp_path, {"model": {"w": torch.ones(3)}}, "wrapped.pth")
    assert main(["--ckpt", str(bare), "--out", str(tmp_path / "bare.swa")]) == 0
    assert main(["--ckpt", str(wrapped), "--out", str(tmp_path / "wrapped.swa")]) == 0
    assert (tmp_path / "bare.swa").read_bytes() == (tmp_path / "wrapped.swa").read_bytes()


def test_cli_strict_exits_one(tmp_path, capsys):
    ckpt = save_ckpt(tmp_path, {"w": torch.ones(1), "n": torch.tensor([1])})
    out = tmp_path / "model.swa"
    assert main(["--ckpt", str(ckpt), "--out", str(out), "--strict"]) == 1
    assert "unsupported dtype" in capsys.readouterr().err
    assert not out.exists()


def test_cli_non_finite_tensor_fails_toolkit_validation(tmp_path, capsys):
    ckpt = save_ckpt(tmp_path, {"w": torch.tensor([1.0, float("inf")])})
    out = tmp_path / "model.swa"
    assert main(["--ckpt", str(ckpt), "--out", str(out)]) == 1
    assert "validation" in capsys.readouterr().err
    assert not out.exists()


def test_cli_missing_checkpoint_exits_two(tmp_path, capsys):
    assert main(["--ckpt", str(tmp_path / "none.pth"), "--out", str(tmp_path / "o.swa")]) == 2
    assert "none.pth" in capsys.readouterr().err
