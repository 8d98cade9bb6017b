"""Motion primitives: backward warping, forward splatting, flow reversal,
flow pooling and deformable sampling.

Flow convention used throughout the package: a flow ``v_ab`` of shape
``(B, 2, H, W)`` holds, for every pixel ``x`` at time ``a``, the displacement
(channel 0 horizontal, channel 1 vertical, both in pixels) that takes it to its
position at time ``b``. Consequently ``backward_warp(frame_b, v_ab)``
reconstructs time ``a`` and ``forward_splat(frame_a, v_ab)`` pushes time ``a``
onto the grid of time ``b``.

All functions accept batched ``(B, C, H, W)`` tensors or single ``(C, H, W)``
samples.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import batched, check_finite, check_same_spatial, check_time

HOLE_EPS = 1e-6
SPLAT_MODES = ("summation", "average", "softmax")


def pixel_grid(height, width, dtype=torch.float32, device=None):
    """Return (xs, ys) pixel-coordinate grids of shape (H, W)."""
    ys = torch.arange(height, dtype=dtype, device=device)
    xs = torch.arange(width, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return gx, gy


def _normalize(coord, size):
    # align_corners=True mapping of pixel index to [-1, 1]
    if size == 1:
        return torch.zeros_like(coord)
    return coord * (2.0 / (size - 1)) - 1.0


def sample_at(feat, xs, ys):
    """Bilinearly sample ``feat`` at absolute pixel positions with border replication.

    ``xs`` and ``ys`` have shape (B, H_out, W_out).
    """
    h, w = feat.shape[-2:]
    grid = torch.stack((_normalize(xs, w), _normalize(ys, h)), dim=-1)
    return F.grid_sample(
        feat, grid, mode="bilinear", padding_mode="border", align_corners=True
    )


@batched
def backward_warp(feat, flow):
    """Sample ``feat`` at ``x + flow(x)`` (bilinear, border replication)."""
    check_same_spatial(feat, flow, "feature and flow")
    check_finite(flow, name="flow")
    h, w = feat.shape[-2:]
    gx, gy = pixel_grid(h, w, flow.dtype, flow.device)
    return sample_at(feat, gx + flow[:, 0], gy + flow[:, 1])


@batched
def forward_splat(feat, flow, mode="average", importance=None, eps=HOLE_EPS):
    """Scatter every source pixel to ``x + flow(x)`` with bilinear weights.

    Parameters
    ----------
    feat : Tensor (B, C, H, W)
    flow : Tensor (B, 2, H, W)
    mode : {"summation", "average", "softmax"}
        ``average`` normalizes by the accumulated bilinear weight; ``softmax``
        additionally weights every contribution by ``exp(importance)``.
    importance : Tensor (B, 1, H, W), required for ``softmax``.
    eps : float
        Accumulated-weight threshold below which a target pixel is a hole.

    Returns
    -------
    out : Tensor (B, C, H, W)
        Splatted features, exactly zero on holes.
    mask : Tensor (B, 1, H, W)
        1 where the target received more than ``eps`` bilinear weight, else 0.
    """
    if mode not in SPLAT_MODES:
        raise ValueError(f"unknown splat mode {mode!r}; expected one of {SPLAT_MODES}")
    check_same_spatial(feat, flow, "feature and flow")
    check_finite(feat, name="features")
    check_finite(flow, name="flow")
    if mode == "softmax":
        if importance is None:
            raise ValueError("softmax splatting needs an importance map")
        check_finite(importance, name="importance map")

    b, c, h, w = feat.shape
    gx, gy = pixel_grid(h, w, flow.dtype, flow.device)
    x = gx + flow[:, 0]
    y = gy + flow[:, 1]
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = x - x0
    fy = y - y0

    if mode == "softmax":
        z = importance - importance.amax(dim=(1, 2, 3), keepdim=True).detach()
        src_weight = torch.exp(z).reshape(b, 1, h * w)
    else:
        src_weight = None

    values = feat.reshape(b, c, h * w)
    num = feat.new_zeros(b, c, h * w)
    acc = feat.new_zeros(b, 1, h * w)
    den = feat.new_zeros(b, 1, h * w)

    corners = (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    )
    for dx, dy, bw in corners:
        xi = x0 + dx
        yi = y0 + dy
        valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
        bw = torch.where(valid, bw, torch.zeros_like(bw)).reshape(b, 1, h * w)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long().reshape(b, 1, h * w)
        acc = acc.scatter_add(2, idx, bw)
        cw = bw if src_weight is None else bw * src_weight
        if src_weight is not None:
            den = den.scatter_add(2, idx, cw)
        num = num.scatter_add(2, idx.expand(b, c, h * w), values * cw)

    mask = (acc > eps).to(feat.dtype)
    if mode == "summation":
        out = num
    else:
        norm = acc if mode == "average" else den
        safe = torch.where(norm > 0, norm, torch.ones_like(norm))
        out = num / safe
    out = out * mask
    return out.reshape(b, c, h, w), mask.reshape(b, 1, h, w)


@batched
def reverse_flow_to_t(v01, v10, t):
    """Approximate the flows anchored at time ``t`` pointing to times 0 and 1.

    ``v_t0`` is ``-t * v01`` splatted (average mode) along ``t * v01``; pixels
    that receive no mass fall back to ``t * v10``. ``v_t1`` is built
    symmetrically from ``v10`` with ``(1 - t) * v01`` as the fallback.
    """
    t = check_time(t)
    check_same_spatial(v01, v10, "flows")
    vt0, m0 = forward_splat(-t * v01, t * v01, mode="average")
    vt0 = vt0 * m0 + t * v10 * (1 - m0)
    vt1, m1 = forward_splat(-(1 - t) * v10, (1 - t) * v10, mode="average")
    vt1 = vt1 * m1 + (1 - t) * v01 * (1 - m1)
    return vt0, vt1


@batched
def avg_pool_flow(flow, patch_size=4):
    """Average the flow over non-overlapping ``patch_size`` squares.

    Inputs whose sides are not multiples of ``patch_size`` are padded by
    replication first, so the result has ``ceil(H / p) x ceil(W / p)`` cells.
    """
    p = int(patch_size)
    if p <= 0:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    h, w = flow.shape[-2:]
    pad_h, pad_w = (-h) % p, (-w) % p
    if pad_h or pad_w:
        flow = F.pad(flow, (0, pad_w, 0, pad_h), mode="replicate")
    return F.avg_pool2d(flow, p)


def resize_flow(flow, size):
    """Resize a (B, 2, H, W) flow to ``size`` and rescale its magnitudes to match."""
    h, w = flow.shape[-2:]
    nh, nw = size
    if (nh, nw) == (h, w):
        return flow
    out = F.interpolate(flow, size=(nh, nw), mode="bilinear", align_corners=False)
    scale = torch.tensor([nw / w, nh / h], dtype=flow.dtype, device=flow.device)
    return out * scale.view(1, 2, 1, 1)


def offset_bound(height, width):
    return math.ceil(max(height, width) / 4)


def kernel_taps(kernel_size):
    """Base (dx, dy) displacement of every tap, row-major over the kernel."""
    r = kernel_size // 2
    return [(kx - r, ky - r) for ky in range(kernel_size) for kx in range(kernel_size)]


@batched
def deformable_sample(feat, offsets, mask_logits, weight, bias=None, kernel_size=3):
    """Modulated deformable convolution with border-replicated bilinear sampling.

    Parameters
    ----------
    feat : Tensor (B, C, H, W)
    offsets : Tensor (B, 2*K*K, H, W)
        Per-tap displacement in pixels, channels ``2k`` (dx) and ``2k + 1`` (dy)
        for tap ``k`` in row-major kernel order. Clamped to
        ``+-ceil(max(H, W) / 4)``.
    mask_logits : Tensor (B, K*K, H, W) or None
        Modulation logits; ``None`` means an all-ones modulation.
    weight : Tensor (C_out, C, K, K)
    bias : Tensor (C_out,) or None
    """
    k = int(kernel_size)
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {kernel_size}")
    b, c, h, w = feat.shape
    if offsets.shape[1] != 2 * k * k:
        raise ValueError(f"expected {2 * k * k} offset channels, got {offsets.shape[1]}")
    check_same_spatial(feat, offsets, "feature and offsets")
    bound = offset_bound(h, w)
    offsets = offsets.clamp(-bound, bound)

    gx, gy = pixel_grid(h, w, feat.dtype, feat.device)
    wk = weight.reshape(weight.shape[0], c, k * k)
    out = None
    for i, (dx, dy) in enumerate(kernel_taps(k)):
        sample = sample_at(
            feat, gx + dx + offsets[:, 2 * i], gy + dy + offsets[:, 2 * i + 1]
        )
        if mask_logits is not None:
            sample = sample * torch.sigmoid(mask_logits[:, i : i + 1])
        term = torch.einsum("bchw,oc->bohw", sample, wk[:, :, i])
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv(nn.Module):
    """Learnable modulated deformable convolution wrapping :func:`deformable_sample`.

    With ``identity_init`` the kernel starts as the centre-tap identity, so zero
    offsets and saturated modulation reproduce the input.
    """

    def __init__(self, channels, kernel_size=3, identity_init=True):
        super().__init__()
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(channels))
        if identity_init:
            nn.init.zeros_(self.weight)
            c = kernel_size // 2
            with torch.no_grad():
                self.weight[:, :, c, c] = torch.eye(channels)
        else:
            nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    def forward(self, feat, offsets, mask_logits=None):
        return deformable_sample(
            feat, offsets, mask_logits, self.weight, self.bias, self.kernel_size
        )
