"""Frame sequences: ingestion, image and raw-tensor I/O, and degradation."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ._validation import check_rate, check_scale, check_sequence

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
RAW_SUFFIXES = {".raw", ".bin", ".f32"}


@dataclass
class FrameSequence:
    """RGB frames (N, 3, H, W) in [0, 1] with uniformly spaced timestamps."""

    frames: np.ndarray
    timestamps: np.ndarray = None
    source_path: str = None
    kinds: list = field(default=None, repr=False)

    def __post_init__(self):
        self.frames = check_sequence(self.frames)
        n = len(self.frames)
        if self.timestamps is None:
            self.timestamps = uniform_timestamps(n)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.timestamps) != n:
            raise ValueError(f"{n} frames but {len(self.timestamps)} timestamps")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames.shape[-2:]


def uniform_timestamps(n):
    return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)


def raw_sidecar(path):
    return Path(str(path) + ".json")


def read_raw(path):
    """Read a little-endian float32 C-order tensor described by ``<path>.json``."""
    path = Path(path)
    meta_path = raw_sidecar(path)
    try:
        meta = json.loads(meta_path.read_text())
        shape = tuple(int(meta[k]) for k in ("n", "c", "h", "w"))
    except (OSError, ValueError, KeyError) as exc:
        raise ValueError(f"cannot read raw tensor sidecar {meta_path}: {exc}") from exc
    data = np.fromfile(path, dtype="<f4")
    if data.size != math.prod(shape):
        raise ValueError(f"{path} holds {data.size} values, sidecar declares {shape}")
    return data.reshape(shape).astype(np.float32)


def write_raw(array, path):
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim != 4:
        raise ValueError(f"raw tensors are 4-D (n, c, h, w), got shape {array.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array.tofile(path)
    n, c, h, w = array.shape
    raw_sidecar(path).write_text(json.dumps({"n": n, "c": c, "h": h, "w": w}))


def read_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


def write_image(frame, path):
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 3 and frame.shape[0] in (1, 3):
        frame = frame.transpose(1, 2, 0)
    arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def ingest(path):
    """Load a folder of RGB images (lexicographic order) or a raw float32 tensor."""
    path = Path(path)
    if path.is_dir():
        files = list_images(path)
        if not files:
            raise ValueError(f"no image files found in {path}")
        frames = []
        for f in files:
            img = read_image(f)
            if frames and img.shape != frames[0].shape:
                raise ValueError(
                    f"mixed resolutions: {f.name} is {img.shape[1:]}, "
                    f"{files[0].name} is {frames[0].shape[1:]}"
                )
            frames.append(img)
        return FrameSequence(np.stack(frames), source_path=str(path))
    if path.is_file():
        data = read_raw(path)
        if data.shape[1] != 3:
            raise ValueError(f"raw tensor {path} must have 3 channels, got {data.shape[1]}")
        return FrameSequence(np.clip(data, 0.0, 1.0), source_path=str(path))
    raise ValueError(f"no such file or directory: {path}")


def write_sequence(seq, directory, prefix="frame"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = getattr(seq, "frames", seq)
    for i, frame in enumerate(frames):
        write_image(frame, directory / f"{prefix}_{i:04d}.png")


def bicubic_downscale(frames, scale_h, scale_w):
    """Antialiased bicubic downscale of (N, 3, H, W) frames by exactly ``(S_H, S_W)``.

    Output pixel ``i`` samples input position ``(i + 0.5) * S - 0.5``, the
    inverse of the upsampler's grid; the output is ``floor(H / S)`` pixels.
    """
    if (scale_h, scale_w) == (1.0, 1.0):
        return frames
    is_np = isinstance(frames, np.ndarray)
    x = torch.from_numpy(frames) if is_np else frames
    y = F.interpolate(
        x, scale_factor=(1.0 / scale_h, 1.0 / scale_w), mode="bicubic",
        align_corners=False, antialias=True, recompute_scale_factor=False,
    )
    y = y.clamp(0.0, 1.0)
    return y.numpy() if is_np else y


def lr_size(height, width, scale_h, scale_w):
    return max(1, math.floor(height / scale_h + 1e-9)), max(1, math.floor(width / scale_w + 1e-9))


def hr_crop_size(height, width, scale_h, scale_w):
    """Largest HR size reachable exactly as ``ceil(h_lr * S)`` from an integer LR size."""
    h, w = lr_size(height, width, scale_h, scale_w)
    return math.ceil(round(h * scale_h, 6)), math.ceil(round(w * scale_w, 6))


def degrade(hr, scale_h, scale_w=None, rate=2):
    """Keep every ``rate``-th frame (1st, 3rd, ... for ``rate=2``) and downsample.

    The HR frames are first cropped (top-left) to ``ceil(h * S)`` so that the
    model's output grid matches them exactly, then bicubic-resized to
    ``h = floor(H / S)``.
    """
    if scale_w is None:
        scale_w = scale_h
    scale_h, scale_w = check_scale(scale_h, scale_w)
    rate = check_rate(rate)
    seq = hr if isinstance(hr, FrameSequence) else FrameSequence(hr)
    keep = np.arange(0, len(seq), rate)
    ch, cw = hr_crop_size(*seq.shape, scale_h, scale_w)
    small = bicubic_downscale(seq.frames[keep, :, :ch, :cw], scale_h, scale_w)
    return FrameSequence(small, seq.timestamps[keep], seq.source_path)


def ground_truth(hr, scale_h, scale_w=None, rate=2):
    """HR targets matching :func:`degrade`: cropped frames up to the last kept input.

    Returns ``(frames, kinds)`` where kinds are ``"existing"`` or ``"interpolated"``.
    """
    if scale_w is None:
        scale_w = scale_h
    seq = hr if isinstance(hr, FrameSequence) else FrameSequence(hr)
    n_lr = (len(seq) - 1) // rate + 1
    m = rate * (n_lr - 1) + 1
    ch, cw = hr_crop_size(*seq.shape, scale_h, scale_w)
    kinds = ["existing" if i % rate == 0 else "interpolated" for i in range(m)]
    return seq.frames[:m, :, :ch, :cw], kinds
