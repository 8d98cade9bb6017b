import json
import zipfile

import numpy as np
import pytest
import torch

from stvsr import checkpoint as ckpt_io
from stvsr.model import STVSRNet


def perturbed_model(seed=0, **kwargs):
    torch.manual_seed(seed)
    model = STVSRNet(8, **kwargs)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.01)
    return model


def test_round_trip_is_bit_exact(tmp_path):
    model = perturbed_model()
    ckpt = ckpt_io.from_model(model, {"channels": 8}, iteration=17)
    ckpt_io.save(ckpt, tmp_path / "m.ckpt")
    loaded = ckpt_io.load(tmp_path / "m.ckpt")
    assert loaded.iteration == 17 and loaded.config == {"channels": 8}
    assert loaded.shapes() == ckpt.shapes()
    other = ckpt_io.apply(loaded, STVSRNet(8))
    for (k, a), (_, b) in zip(model.state_dict().items(), other.state_dict().items()):
        assert torch.equal(a, b), k


def test_manifest_lists_segments(tmp_path):
    ckpt_io.save(ckpt_io.from_model(STVSRNet(8)), tmp_path / "m.ckpt")
    with zipfile.ZipFile(tmp_path / "m.ckpt") as zf:
        manifest = json.loads(zf.read("manifest.json"))
    assert manifest["format"] == ckpt_io.FORMAT and manifest["version"] == ckpt_io.VERSION
    assert set(manifest["segments"]) == {"propagation", "temporal", "upsampler"}


def test_version_and_format_are_checked(tmp_path):
    path = tmp_path / "m.ckpt"
    ckpt = ckpt_io.from_model(STVSRNet(8))
    ckpt.version = 99
    ckpt_io.save(ckpt, path)
    with pytest.raises(ValueError, match="version"):
        ckpt_io.load(path)
    with zipfile.ZipFile(tmp_path / "bad.ckpt", "w") as zf:
        zf.writestr("manifest.json", json.dumps({"format": "other"}))
    with pytest.raises(ValueError, match="format"):
        ckpt_io.load(tmp_path / "bad.ckpt")


def test_shape_mismatch_is_rejected(tmp_path):
    ckpt = ckpt_io.from_model(STVSRNet(8))
    with pytest.raises(ValueError, match="shape"):
        ckpt_io.apply(ckpt, STVSRNet(16))
    name = next(iter(ckpt.segments["upsampler"]))
    ckpt.segments["upsampler"].pop(name)
    with pytest.raises(ValueError, match="missing"):
        ckpt_io.apply(ckpt, STVSRNet(8))


def test_truncated_blob_is_rejected(tmp_path):
    ckpt = ckpt_io.from_model(STVSRNet(8))
    seg = ckpt.segments["temporal"]
    name = next(k for k, v in seg.items() if v.size > 1)
    seg[name] = seg[name].ravel()[:-1]
    ckpt_io.save(ckpt, tmp_path / "m.ckpt")
    # rewrite the manifest so it claims the original shape
    with zipfile.ZipFile(tmp_path / "m.ckpt") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        blobs = {n: zf.read(n) for n in zf.namelist() if n != "manifest.json"}
    for e in manifest["segments"]["temporal"]:
        if e["name"] == name:
            e["shape"] = [e["shape"][0] + 1]
    with zipfile.ZipFile(tmp_path / "m.ckpt", "w") as zf:
        for n, b in blobs.items():
            zf.writestr(n, b)
        zf.writestr("manifest.json", json.dumps(manifest))
    with pytest.raises(ValueError, match="bytes"):
        ckpt_io.load(tmp_path / "m.ckpt")


def test_blobs_are_little_endian_float32(tmp_path):
    ckpt = ckpt_io.from_model(STVSRNet(8))
    ckpt_io.save(ckpt, tmp_path / "m.ckpt")
    seg, name = "upsampler", next(iter(ckpt.segments["upsampler"]))
    with zipfile.ZipFile(tmp_path / "m.ckpt") as zf:
        raw = zf.read(f"{seg}/{name}.bin")
    assert np.array_equal(np.frombuffer(raw, "<f4"), ckpt.segments[seg][name].ravel())
