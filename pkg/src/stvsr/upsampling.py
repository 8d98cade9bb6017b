"""Scale-arbitrary upsampling by cascaded depth-to-space.

Features are expanded by pixel shuffle at x2, x4 and x8, every branch is
resampled bilinearly onto the exact target grid (with a learned, coordinate
conditioned sub-pixel shift), and the three branches are fused into an RGB
residual on top of a bicubic resampling of the base frame.
"""

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import check_scale

BRANCH_LEVELS = (1, 2, 3)


def pixel_shuffle(x, r):
    """Depth-to-space: (..., C*r*r, H, W) -> (..., C, r*H, r*W).

    ``out[c, r*y + dy, r*x + dx] = in[c*r*r + dy*r + dx, y, x]``.
    """
    r = int(r)
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} is not divisible by r^2 = {r * r}")
    return F.pixel_shuffle(x, r)


def space_to_depth(x, r):
    """Inverse of :func:`pixel_shuffle`."""
    r = int(r)
    *lead, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial shape {(h, w)} is not divisible by {r}")
    return F.pixel_unshuffle(x, r)


def output_size(height, width, scale_h, scale_w):
    """Target grid ``(ceil(H * S_H), ceil(W * S_W))``, robust to float noise."""
    return (math.ceil(round(height * scale_h, 6)), math.ceil(round(width * scale_w, 6)))


class OffsetMap(NamedTuple):
    """Relative position of every HR pixel inside its LR source cell.

    ``dis`` is (2, H', W') with channels (Dis_x, Dis_y); ``coords`` holds the
    integer LR source coordinates (x, y).
    """

    dis: torch.Tensor
    coords: torch.Tensor


def _axis_offsets(n_out, scale, dtype):
    sigma = torch.arange(n_out, dtype=torch.float64)
    ratio = (sigma + 0.5) / scale
    lr = ratio - 0.5
    cell = torch.floor(ratio)
    return (lr - cell).to(dtype), cell.long()


def relative_offsets(height_out, width_out, scale_h, scale_w, dtype=torch.float32):
    """Map every HR pixel to LR space and return its fractional offset.

    ``LR(s) = (s + 0.5) / S - 0.5`` and ``Dis = LR(s) - floor((s + 0.5) / S)``,
    so every ``Dis`` lies in ``[-0.5, 0.5)``.
    """
    if scale_h <= 0 or scale_w <= 0:
        raise ValueError(f"scales must be positive, got {(scale_h, scale_w)}")
    dx, cx = _axis_offsets(width_out, float(scale_w), dtype)
    dy, cy = _axis_offsets(height_out, float(scale_h), dtype)
    dis = torch.stack(
        (dx.view(1, -1).expand(height_out, -1), dy.view(-1, 1).expand(-1, width_out))
    )
    coords = torch.stack(
        (cx.view(1, -1).expand(height_out, -1), cy.view(-1, 1).expand(-1, width_out))
    )
    return OffsetMap(dis, coords)


def _scale_code(scale_h, scale_w, ref):
    return ref.new_tensor([1.0 / scale_h, 1.0 / scale_w])


class ScaleMLP(nn.Module):
    """Per-pixel MLP from (Dis_x, Dis_y, 1/S_H, 1/S_W) to a bounded shift (dx, dy).

    The output layer starts at zero, so the shift is zero at initialization;
    ``tanh`` bounds it to one LR pixel.
    """

    def __init__(self, hidden=32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(4, hidden, 1), nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 1), nn.ReLU(inplace=True),
        )
        self.out = nn.Conv2d(hidden, 2, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, dis, scale_h, scale_w):
        if dis.dim() == 3:
            dis = dis.unsqueeze(0)
        code = _scale_code(scale_h, scale_w, dis).view(1, 2, 1, 1)
        x = torch.cat([dis, code.expand(dis.shape[0], 2, *dis.shape[-2:])], dim=1)
        return torch.tanh(self.out(self.body(x)))


def scale_mlp(mlp, offsets, scale_h, scale_w):
    return mlp(offsets.dis, scale_h, scale_w)


class ScaleAwareBlock(nn.Module):
    """Residual block whose input is modulated channel-wise by a scale MLP.

    The modulation is ``1 + g(1/S_H, 1/S_W)`` with ``g`` zero-initialized, so
    the block starts out (and with ``conditioned=False`` stays) a plain
    residual block.
    """

    def __init__(self, channels=32, hidden=16, conditioned=True):
        super().__init__()
        self.conditioned = conditioned
        self.modulation = nn.Sequential(
            nn.Linear(2, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, channels)
        )
        nn.init.zeros_(self.modulation[-1].weight)
        nn.init.zeros_(self.modulation[-1].bias)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.1, inplace=True)

    def scale_gain(self, scale_h, scale_w, ref):
        if not self.conditioned:
            return None
        code = _scale_code(scale_h, scale_w, ref)
        return 1.0 + self.modulation(code)

    def forward(self, x, scale_h, scale_w):
        gain = self.scale_gain(scale_h, scale_w, x)
        y = x if gain is None else x * gain.view(1, -1, 1, 1)
        return x + self.conv2(self.act(self.conv1(y)))


def _sample_coords(n_out, scale, factor, dtype, device):
    # position on a grid `factor` times finer than LR, pixel-centre aligned
    sigma = torch.arange(n_out, dtype=torch.float64, device=device)
    lr = (sigma + 0.5) / scale - 0.5
    return ((lr + 0.5) * factor - 0.5).to(dtype)


def resample(x, size, scale_h, scale_w, factor=1, delta=None, mode="bilinear"):
    """Resample ``x`` (on a grid ``factor`` times LR) onto the HR grid.

    ``delta`` is an optional (B, 2, H', W') shift in LR pixels.
    """
    b, _, h, w = x.shape
    ho, wo = size
    xs = _sample_coords(wo, scale_w, factor, x.dtype, x.device)
    ys = _sample_coords(ho, scale_h, factor, x.dtype, x.device)
    gx = xs.view(1, 1, -1).expand(b, ho, wo)
    gy = ys.view(1, -1, 1).expand(b, ho, wo)
    if delta is not None:
        gx = gx + delta[:, 0] * factor
        gy = gy + delta[:, 1] * factor
    grid = torch.stack(((2 * gx + 1) / w - 1, (2 * gy + 1) / h - 1), dim=-1)
    return F.grid_sample(x, grid, mode=mode, padding_mode="border", align_corners=False)


class CascadeUpsampler(nn.Module):
    """Cascaded depth-to-space upsampler to an arbitrary (S_H, S_W) in [1, 8]."""

    def __init__(self, channels=32, use_offsets=True, base_mode="bicubic"):
        super().__init__()
        if base_mode not in ("bicubic", "bilinear"):
            raise ValueError(f"base_mode must be 'bicubic' or 'bilinear', got {base_mode!r}")
        self.channels = channels
        self.base_mode = base_mode
        self.use_offsets = use_offsets
        self.pre = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1), nn.LeakyReLU(0.1, inplace=True)
        )
        self.proj = nn.ModuleList(
            nn.Conv2d(channels, channels * 4**lv, 1) for lv in BRANCH_LEVELS
        )
        self.offset_mlp = ScaleMLP()
        self.fuse = nn.Sequential(
            nn.Conv2d(channels * len(BRANCH_LEVELS), channels, 1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.tail = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def offsets(self, size, scale_h, scale_w, batch, ref):
        if not self.use_offsets:
            return None
        rel = relative_offsets(*size, scale_h, scale_w, dtype=ref.dtype).dis.to(ref.device)
        delta = self.offset_mlp(rel, scale_h, scale_w)
        return delta.expand(batch, -1, -1, -1)

    def forward(self, feat, scale_h, scale_w, base_frame):
        scale_h, scale_w = check_scale(scale_h, scale_w)
        b, _, h, w = feat.shape
        size = output_size(h, w, scale_h, scale_w)
        delta = self.offsets(size, scale_h, scale_w, b, feat)
        x = self.pre(feat)
        branches = []
        for lv, proj in zip(BRANCH_LEVELS, self.proj):
            shuffled = pixel_shuffle(proj(x), 2**lv)
            branches.append(resample(shuffled, size, scale_h, scale_w, 2**lv, delta))
            del shuffled
        residual = self.tail(self.fuse(torch.cat(branches, dim=1)))
        base = resample(base_frame, size, scale_h, scale_w, mode=self.base_mode)
        return (base + residual).clamp(0.0, 1.0)


def upsample(module, feat, scale_h, scale_w, base_frame):
    """Functional entry point: ``module(feat, S_H, S_W, base_frame)``."""
    return module(feat, scale_h, scale_w, base_frame)
