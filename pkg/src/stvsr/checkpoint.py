"""Zip checkpoints: a JSON manifest plus one raw little-endian float32 blob per tensor."""

import json
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch

FORMAT = "stvsr-checkpoint"
VERSION = 1
SEGMENTS = ("propagation", "temporal", "upsampler", "flow")


@dataclass
class Checkpoint:
    segments: dict
    config: dict = field(default_factory=dict)
    iteration: int = 0
    version: int = VERSION

    def shapes(self):
        return {s: {k: list(v.shape) for k, v in t.items()} for s, t in self.segments.items()}


def from_model(model, config=None, iteration=0):
    segments = {}
    for name, module in model.segments().items():
        segments[name] = {
            k: v.detach().cpu().numpy().astype(np.float32, copy=True)
            for k, v in module.state_dict().items()
        }
    return Checkpoint(segments, dict(config or {}), int(iteration))


def save(ckpt, path):
    manifest = {
        "format": FORMAT,
        "version": ckpt.version,
        "iteration": ckpt.iteration,
        "config": ckpt.config,
        "segments": {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for seg, tensors in ckpt.segments.items():
            if seg not in SEGMENTS:
                raise ValueError(f"unknown checkpoint segment {seg!r}")
            entries = []
            for name, arr in tensors.items():
                blob = f"{seg}/{name}.bin"
                zf.writestr(blob, np.ascontiguousarray(arr, dtype="<f4").tobytes())
                entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "blob": blob})
            manifest["segments"][seg] = entries
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))


def load(path):
    with zipfile.ZipFile(path) as zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise ValueError(f"{path} has no manifest.json") from None
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path} is not a checkpoint (format {manifest.get('format')!r})")
        if manifest.get("version") != VERSION:
            raise ValueError(
                f"checkpoint version {manifest.get('version')} is not supported (expected {VERSION})"
            )
        segments = {}
        for seg, entries in manifest["segments"].items():
            tensors = {}
            for e in entries:
                raw = zf.read(e["blob"])
                shape = tuple(e["shape"])
                if len(raw) != 4 * int(np.prod(shape, dtype=np.int64)):
                    raise ValueError(
                        f"blob {e['blob']} has {len(raw)} bytes, manifest shape {shape} needs "
                        f"{4 * int(np.prod(shape, dtype=np.int64))}"
                    )
                tensors[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            segments[seg] = tensors
    return Checkpoint(segments, manifest.get("config", {}), manifest.get("iteration", 0), manifest["version"])


def apply(ckpt, model):
    """Copy checkpoint tensors into ``model`` after checking every shape."""
    mods = model.segments()
    for seg, tensors in ckpt.segments.items():
        if seg not in mods:
            if tensors:
                raise ValueError(f"model has no segment {seg!r}")
            continue
        expected = mods[seg].state_dict()
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ValueError(f"segment {seg!r}: missing {missing}, unexpected {extra}")
        for k, v in tensors.items():
            if tuple(expected[k].shape) != v.shape:
                raise ValueError(
                    f"segment {seg!r} tensor {k!r}: checkpoint shape {v.shape}, "
                    f"model shape {tuple(expected[k].shape)}"
                )
        mods[seg].load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
    return model
