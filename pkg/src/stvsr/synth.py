"""Synthetic clips with known motion: moving textured rectangles over a drifting grating."""

from pathlib import Path

import numpy as np

from .data import write_raw, write_sequence

SUPERSAMPLE = 4


def _grating(x, y, freq, theta, phase):
    return 0.5 + 0.5 * np.sin(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)


def _random_scene(rng, size):
    s = size
    scene = {
        "bg": dict(
            c0=rng.uniform(0.0, 1.0, 3), c1=rng.uniform(0.0, 1.0, 3),
            freq=rng.uniform(1 / 24, 1 / 10), theta=rng.uniform(0, np.pi),
            phase=rng.uniform(0, 2 * np.pi), vel=rng.uniform(-1.5, 1.5, 2),
        ),
        "rects": [],
    }
    for _ in range(rng.integers(2, 4)):
        scene["rects"].append(dict(
            centre=rng.uniform(0.2 * s, 0.8 * s, 2),
            half=rng.uniform(6, 16, 2),
            vel=rng.uniform(-3.0, 3.0, 2),
            color=rng.uniform(0.0, 1.0, 3),
            tex_color=rng.uniform(0.0, 1.0, 3),
            tex_amp=rng.uniform(0.0, 0.6),
            freq=rng.uniform(1 / 20, 1 / 8), theta=rng.uniform(0, np.pi),
        ))
    return scene


def _render(scene, size, k):
    """Frame ``k`` (3, H, W) and the forward flow from ``k`` to ``k + 1`` (2, H, W)."""
    n = size * SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / SUPERSAMPLE - 0.5
    x, y = np.meshgrid(coords, coords)
    bg = scene["bg"]
    bx, by = x - bg["vel"][0] * k, y - bg["vel"][1] * k
    g = _grating(bx, by, bg["freq"], bg["theta"], bg["phase"])
    img = bg["c0"][:, None, None] * (1 - g) + bg["c1"][:, None, None] * g
    flow = np.empty((2, n, n))
    flow[0], flow[1] = bg["vel"][0], bg["vel"][1]
    for r in scene["rects"]:
        cx, cy = r["centre"] + r["vel"] * k
        inside = (np.abs(x - cx) < r["half"][0]) & (np.abs(y - cy) < r["half"][1])
        t = r["tex_amp"] * _grating(x - cx, y - cy, r["freq"], r["theta"], 0.0)
        col = r["color"][:, None, None] * (1 - t) + r["tex_color"][:, None, None] * t
        img = np.where(inside, col, img)
        flow[0][inside], flow[1][inside] = r["vel"]
    # box-filter the supersampled render; flow takes the centre sample
    img = img.reshape(3, size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(2, 4))
    c = SUPERSAMPLE // 2
    flow = flow[:, c::SUPERSAMPLE, c::SUPERSAMPLE]
    return img.astype(np.float32), flow.astype(np.float32)


def make_clip(rng, n_frames=7, size=64):
    """Return ``(frames, flows)``: (N, 3, S, S) in [0, 1] and (N-1, 2, S, S) flows.

    ``flows[k]`` is the ground-truth displacement of every pixel of frame ``k``
    to frame ``k + 1``.
    """
    scene = _random_scene(rng, size)
    frames, flows = [], []
    for k in range(n_frames):
        img, flow = _render(scene, size, k)
        frames.append(img)
        if k < n_frames - 1:
            flows.append(flow)
    return np.clip(np.stack(frames), 0.0, 1.0), np.stack(flows) if flows else np.zeros((0, 2, size, size), np.float32)


def make_clips(n_clips, n_frames=7, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return [make_clip(rng, n_frames, size) for _ in range(n_clips)]


def write_dataset(out_dir, n_clips=16, n_frames=7, size=64, seed=0):
    """Write ``clip_XXX/frame_YYYY.png`` folders plus ``clip_XXX/flows.raw``."""
    out_dir = Path(out_dir)
    paths = []
    for i, (frames, flows) in enumerate(make_clips(n_clips, n_frames, size, seed)):
        clip_dir = out_dir / f"clip_{i:03d}"
        write_sequence(frames, clip_dir)
        if len(flows):
            write_raw(flows, clip_dir / "flows.raw")
        paths.append(clip_dir)
    return paths
