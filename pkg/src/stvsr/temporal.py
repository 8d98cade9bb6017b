"""Intermediate-feature synthesis by forward-warping-guided alignment.

Two propagated features are forward splatted to time ``t`` on a three-level
pyramid, their holes are filled from each other, deformable convolutions
refine the alignment coarse to fine, and a learned per-pixel weight blends the
two aligned features at full resolution.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import batched, check_same_spatial, check_time
from .flow_ops import DeformConv, backward_warp, forward_splat, resize_flow

N_LEVELS = 3
MIN_SIZE = 4


def _identity_conv(conv):
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    c = conv.kernel_size[0] // 2
    with torch.no_grad():
        conv.weight[:, :, c, c] = torch.eye(conv.out_channels, conv.in_channels)
    return conv


class FeaturePyramid(nn.Module):
    """Level 0 is one 3x3 conv of the input; levels 1 and 2 use stride-2 convs.

    All convs start as the identity (centre tap), and sizes halve with ceil
    division: 33 -> 17 -> 9.
    """

    def __init__(self, channels=32):
        super().__init__()
        self.level0 = _identity_conv(nn.Conv2d(channels, channels, 3, padding=1))
        self.down = nn.ModuleList(
            _identity_conv(nn.Conv2d(channels, channels, 3, stride=2, padding=1))
            for _ in range(N_LEVELS - 1)
        )
        self.act = nn.LeakyReLU(0.1)

    def forward(self, feat):
        if min(feat.shape[-2:]) < MIN_SIZE:
            raise ValueError(
                f"feature maps must be at least {MIN_SIZE}x{MIN_SIZE}, got {tuple(feat.shape[-2:])}"
            )
        levels = [self.level0(feat)]
        for conv in self.down:
            levels.append(self.act(conv(levels[-1])))
        return levels


def build_pyramid(pyramid, feat):
    return pyramid(feat)


@batched
def fwga_warp_level(f0, f1, v01, v10, t, z0=None, z1=None):
    """Forward-warp both features to time ``t`` and fill holes from each other.

    Returns ``(f0t, f1t, m0, m1)`` where ``m0``/``m1`` mark target pixels that
    received splat mass. The time scaling of the splatted features happens
    before the complementary fill. ``z0``/``z1`` are softmax importance maps;
    ``None`` means uniform importance.
    """
    t = check_time(t)
    check_same_spatial(f0, v01, "features and flow")
    check_same_spatial(f1, v10, "features and flow")
    if z0 is None:
        z0 = f0.new_zeros(f0.shape[0], 1, *f0.shape[-2:])
    if z1 is None:
        z1 = f1.new_zeros(f1.shape[0], 1, *f1.shape[-2:])
    w0, m0 = forward_splat(f0, t * v01, mode="softmax", importance=z0)
    w1, m1 = forward_splat(f1, (1 - t) * v10, mode="softmax", importance=z1)
    w0 = t * w0
    w1 = (1 - t) * w1
    f0t = w0 * m0 + w1 * (1 - m0)
    f1t = w1 * m1 + w0 * (1 - m1)
    return f0t, f1t, m0, m1


class OffsetHead(nn.Module):
    """Predicts residual deformable offsets and modulation logits for one side.

    Inputs are (own warped feature, other warped feature, upsampled prior). The
    last layer is zero-initialized so the offsets start equal to the prior.
    """

    def __init__(self, channels=32, kernel_size=3):
        super().__init__()
        kk = kernel_size * kernel_size
        self.n_offsets = 2 * kk
        self.body = nn.Sequential(
            nn.Conv2d(2 * channels + 2 * kk, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.out = nn.Conv2d(channels, 3 * kk, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, own, other, prior):
        y = self.out(self.body(torch.cat([own, other, prior], dim=1)))
        return prior + y[:, : self.n_offsets], y[:, self.n_offsets :]


def upsample_offsets(offsets, size):
    """Upsample a coarser offset field to ``size`` and double its magnitude."""
    up = F.interpolate(offsets, scale_factor=2, mode="bilinear", align_corners=False)
    return 2.0 * up[..., : size[0], : size[1]]


def refine_level(head0, head1, dcn0, dcn1, f0t, f1t, prev_offsets=None, use_dcn=True):
    """Deformable refinement of one pyramid level.

    ``prev_offsets`` is the (B, 4*K*K, H/2, W/2) field of the coarser level
    (side 0 channels first), or ``None`` at the coarsest level. Returns
    ``(aligned0, aligned1, offsets)``.
    """
    n = head0.n_offsets
    if prev_offsets is None:
        prior = f0t.new_zeros(f0t.shape[0], 2 * n, *f0t.shape[-2:])
    else:
        prior = upsample_offsets(prev_offsets, f0t.shape[-2:])
    if not use_dcn:
        return f0t, f1t, prior
    off0, mask0 = head0(f0t, f1t, prior[:, :n])
    off1, mask1 = head1(f1t, f0t, prior[:, n:])
    aligned0 = dcn0(f0t, off0, mask0)
    aligned1 = dcn1(f1t, off1, mask1)
    return aligned0, aligned1, torch.cat([off0, off1], dim=1)


class Blend(nn.Module):
    """``W * a0 + (1 - W) * a1`` with ``W = sigmoid(conv(a0) + conv'(a1))``.

    With ``tied=True`` the second conv is the negated first one, which makes the
    blend exactly equivariant to swapping its inputs.
    """

    def __init__(self, channels=32, tied=False):
        super().__init__()
        self.tied = tied
        self.conv0 = nn.Conv2d(channels, 1, 3, padding=1)
        self.conv1 = nn.Conv2d(channels, 1, 3, padding=1, bias=False)
        for conv in (self.conv0, self.conv1):
            nn.init.zeros_(conv.weight)
        nn.init.zeros_(self.conv0.bias)

    def weight(self, a0, a1):
        if self.tied:
            logit = self.conv0(a0) - self.conv0(a1)
        else:
            logit = self.conv0(a0) + self.conv1(a1)
        return torch.sigmoid(logit)

    def forward(self, a0, a1):
        check_same_spatial(a0, a1, "aligned features")
        w = self.weight(a0, a1)
        return w * a0 + (1 - w) * a1


def blend(module, aligned0, aligned1):
    return module(aligned0, aligned1)


class TemporalModulation(nn.Module):
    """Synthesizes the feature at an intermediate time from two neighbours.

    Parameters
    ----------
    channels : int
    kernel_size : int
        Deformable kernel size.
    use_fwg : bool
        Forward-warp guidance; when off the raw neighbour features enter the
        deformable refinement directly.
    use_dcn : bool
        Deformable refinement; when off the hole-filled warped features are
        blended directly.
    tied : bool
        Share every per-side module between the two sides (symmetry testing).
    """

    def __init__(self, channels=32, kernel_size=3, use_fwg=True, use_dcn=True, tied=False):
        super().__init__()
        self.use_fwg = use_fwg
        self.use_dcn = use_dcn
        self.tied = tied
        self.pyramid = FeaturePyramid(channels)
        self.heads0 = nn.ModuleList(OffsetHead(channels, kernel_size) for _ in range(N_LEVELS))
        self.dcns0 = nn.ModuleList(_dcn(channels, kernel_size) for _ in range(N_LEVELS))
        if tied:
            self.heads1, self.dcns1 = self.heads0, self.dcns0
        else:
            self.heads1 = nn.ModuleList(OffsetHead(channels, kernel_size) for _ in range(N_LEVELS))
            self.dcns1 = nn.ModuleList(_dcn(channels, kernel_size) for _ in range(N_LEVELS))
        self.blend = Blend(channels, tied=tied)
        # scales the photometric-error importance of softmax splatting
        self.importance_scale = nn.Parameter(torch.ones(()))

    def importance(self, src, other, v_src_other):
        err = (src - backward_warp(other, v_src_other)).abs().mean(dim=1, keepdim=True)
        return -self.importance_scale * err

    def forward(self, f0, f1, v01, v10, t, frames=None):
        """Feature at time ``t``; ``frames=(I0, I1)`` drives the splat importance."""
        t = check_time(t)
        check_same_spatial(f0, f1, "features")
        if frames is None:
            frames = (f0, f1)
        z0 = self.importance(frames[0], frames[1], v01)
        z1 = self.importance(frames[1], frames[0], v10)
        pyr0, pyr1 = self.pyramid(f0), self.pyramid(f1)
        offsets = None
        for lv in reversed(range(N_LEVELS)):
            a, b = pyr0[lv], pyr1[lv]
            size = a.shape[-2:]
            if self.use_fwg:
                a, b, _, _ = fwga_warp_level(
                    a, b, resize_flow(v01, size), resize_flow(v10, size), t,
                    _resize_map(z0, size), _resize_map(z1, size),
                )
            a, b, offsets = refine_level(
                self.heads0[lv], self.heads1[lv], self.dcns0[lv], self.dcns1[lv],
                a, b, offsets, self.use_dcn,
            )
        return self.blend(a, b)


def _dcn(channels, kernel_size):
    dcn = DeformConv(channels, kernel_size)
    # zero modulation logits give sigmoid 0.5; double the identity to compensate
    with torch.no_grad():
        dcn.weight.mul_(2.0)
    return dcn


def _resize_map(z, size):
    if z.shape[-2:] == tuple(size):
        return z
    return F.interpolate(z, size=size, mode="bilinear", align_corners=False, antialias=True)


def interpolate_feature(module, f0, f1, v01, v10, t, frames=None):
    return module(f0, f1, v01, v10, t, frames)
