"""Input validation helpers shared by the functional ops and the estimators."""

import math
from functools import wraps

import numpy as np
import torch

MIN_SCALE = 1.0
MAX_SCALE = 8.0


def check_finite(*tensors, name="input"):
    for t in tensors:
        if t is not None and not torch.isfinite(t).all():
            raise ValueError(f"{name} contains non-finite values")


def check_same_spatial(a, b, what="inputs"):
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(
            f"spatial shape mismatch between {what}: "
            f"{tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}"
        )


def check_time(t):
    t = float(t)
    if not 0.0 < t < 1.0:
        raise ValueError(f"intermediate time must lie in (0, 1), got {t}")
    return t


def check_scale(scale_h, scale_w=None, lo=MIN_SCALE, hi=MAX_SCALE):
    """Validate a spatial scale pair and return it as floats."""
    if scale_w is None:
        scale_w = scale_h
    scale_h, scale_w = float(scale_h), float(scale_w)
    for s in (scale_h, scale_w):
        if not math.isfinite(s) or s <= 0:
            raise ValueError(f"scale must be positive, got {s}")
        if s < lo or s > hi:
            raise ValueError(f"scale {s} outside supported range [{lo}, {hi}]")
    return scale_h, scale_w


def check_rate(rate):
    if int(rate) != rate or rate < 1:
        raise ValueError(f"temporal factor must be an integer >= 1, got {rate}")
    return int(rate)


def check_sequence(frames, min_frames=1):
    """Coerce frames to a float32 array of shape (N, 3, H, W) with values in [0, 1].

    Accepts an array, a list of (3, H, W) arrays, or anything with a ``frames``
    attribute (e.g. :class:`stvsr.data.FrameSequence`).
    """
    frames = getattr(frames, "frames", frames)
    if isinstance(frames, torch.Tensor):
        frames = frames.detach().cpu().numpy()
    if isinstance(frames, (list, tuple)):
        if len(frames) == 0:
            raise ValueError("empty frame sequence")
        shapes = {np.shape(f) for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"frames have mixed shapes: {sorted(shapes)}")
        frames = np.stack([np.asarray(f) for f in frames])
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected frames of shape (N, 3, H, W), got {frames.shape}")
    if frames.shape[0] < min_frames:
        raise ValueError(f"need at least {min_frames} frame(s), got {frames.shape[0]}")
    if not np.isfinite(frames).all():
        raise ValueError("frames contain non-finite values")
    return frames


def _lift(x):
    return x.unsqueeze(0) if isinstance(x, torch.Tensor) and x.dim() == 3 else x


def batched(fn):
    """Let a batched (B, C, H, W) op also accept a single (C, H, W) sample.

    Only 3-D tensor arguments gain a batch axis; parameters such as kernels
    and biases pass through unchanged.
    """

    @wraps(fn)
    def wrapper(*args, **kwargs):
        single = isinstance(args[0], torch.Tensor) and args[0].dim() == 3
        if not single:
            return fn(*args, **kwargs)
        args = [_lift(a) for a in args]
        kwargs = {k: _lift(v) for k, v in kwargs.items()}
        out = fn(*args, **kwargs)
        if isinstance(out, tuple):
            return tuple(o.squeeze(0) if isinstance(o, torch.Tensor) else o for o in out)
        return out.squeeze(0)

    return wrapper
