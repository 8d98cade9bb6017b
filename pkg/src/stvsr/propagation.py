"""Scale-conditioned feature extraction and bidirectional recurrent propagation."""

import torch
import torch.nn as nn

from .flow_ops import DeformConv, backward_warp
from .upsampling import ScaleAwareBlock


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.1, inplace=True)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class FeatureExtractor(nn.Module):
    """Shallow conv head followed by scale-aware residual blocks."""

    def __init__(self, channels=32, n_blocks=5, conditioned=True):
        super().__init__()
        self.head = nn.Sequential(nn.Conv2d(3, channels, 3, padding=1), nn.LeakyReLU(0.1, inplace=True))
        self.blocks = nn.ModuleList(
            ScaleAwareBlock(channels, conditioned=conditioned) for _ in range(n_blocks)
        )

    def forward(self, frames, scale_h, scale_w):
        x = self.head(frames)
        for block in self.blocks:
            x = block(x, scale_h, scale_w)
        return x


def extract_features(extractor, frames, scale_h, scale_w):
    """Per-frame features for a (N, 3, H, W) or (B, N, 3, H, W) stack."""
    if frames.numel() == 0:
        raise ValueError("cannot extract features from an empty sequence")
    if frames.dim() == 4:
        return extractor(frames, scale_h, scale_w)
    b, n = frames.shape[:2]
    out = extractor(frames.flatten(0, 1), scale_h, scale_w)
    return out.view(b, n, *out.shape[1:])


class PropagationBranch(nn.Module):
    """One recurrent direction: flow pre-alignment, deformable refinement, fusion."""

    def __init__(self, channels=32, kernel_size=3, n_blocks=2):
        super().__init__()
        kk = kernel_size * kernel_size
        self.n_offsets = 2 * kk
        self.offset_head = nn.Sequential(
            nn.Conv2d(2 * channels + 2, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, 3 * kk, 3, padding=1),
        )
        nn.init.zeros_(self.offset_head[-1].weight)
        nn.init.zeros_(self.offset_head[-1].bias)
        self.dcn = DeformConv(channels, kernel_size)
        with torch.no_grad():
            self.dcn.weight.mul_(2.0)
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * channels, channels, 3, padding=1), nn.LeakyReLU(0.1, inplace=True)
        )
        self.blocks = nn.Sequential(*(ResBlock(channels) for _ in range(n_blocks)))

    def align(self, hidden, feat, flow):
        warped = backward_warp(hidden, flow)
        y = self.offset_head(torch.cat([warped, feat, flow], dim=1))
        return self.dcn(warped, y[:, : self.n_offsets], y[:, self.n_offsets :])

    def forward(self, hidden, feat, flow=None):
        if flow is not None:
            hidden = self.align(hidden, feat, flow)
        return self.blocks(self.fuse(torch.cat([hidden, feat], dim=1)))


class BidirectionalPropagator(nn.Module):
    """Backward then forward recurrence over the sequence with a skip fusion.

    The output for frame ``i`` is a 1x1 projection of
    ``[backward_hidden_i, forward_hidden_i, features_i]``, written as a sum of
    three 1x1 convs. With ``tied=True`` both directions share their branch and
    projection weights, which makes the module exactly equivariant to time
    reversal.
    """

    def __init__(self, channels=32, kernel_size=3, n_blocks=2, tied=False):
        super().__init__()
        self.channels = channels
        self.tied = tied
        self.backward_branch = PropagationBranch(channels, kernel_size, n_blocks)
        self.forward_branch = (
            self.backward_branch if tied else PropagationBranch(channels, kernel_size, n_blocks)
        )
        self.proj_backward = nn.Conv2d(channels, channels, 1, bias=False)
        self.proj_forward = (
            self.proj_backward if tied else nn.Conv2d(channels, channels, 1, bias=False)
        )
        self.proj_skip = nn.Conv2d(channels, channels, 1)

    def _check(self, features, flows_fwd, flows_bwd):
        n = len(features)
        if n == 0:
            raise ValueError("cannot propagate an empty sequence")
        if len(flows_fwd) != n - 1 or len(flows_bwd) != n - 1:
            raise ValueError(
                f"expected {n - 1} flows per direction for {n} frames, "
                f"got {len(flows_fwd)} and {len(flows_bwd)}"
            )

    def backward_pass(self, features, flows_fwd):
        n = len(features)
        hidden = features[0].new_zeros(features[0].shape)
        states = [None] * n
        for i in range(n - 1, -1, -1):
            flow = flows_fwd[i] if i < n - 1 else None
            hidden = self.backward_branch(hidden, features[i], flow)
            states[i] = hidden
        return states

    def iter_propagate(self, features, flows_fwd, flows_bwd):
        """Yield the propagated feature of every frame in temporal order.

        ``features`` is a sequence of (B, C, H, W) maps, ``flows_fwd[i]`` is the
        flow from frame i to i+1 and ``flows_bwd[i]`` the flow from i+1 to i.
        """
        self._check(features, flows_fwd, flows_bwd)
        back = self.backward_pass(features, flows_fwd)
        hidden = features[0].new_zeros(features[0].shape)
        for i, feat in enumerate(features):
            flow = flows_bwd[i - 1] if i > 0 else None
            hidden = self.forward_branch(hidden, feat, flow)
            out = self.proj_backward(back[i]) + self.proj_forward(hidden)
            back[i] = None
            yield out + self.proj_skip(feat)

    def forward(self, features, flows_fwd, flows_bwd):
        return list(self.iter_propagate(features, flows_fwd, flows_bwd))


def propagate(module, features, flows_fwd, flows_bwd):
    return module(features, flows_fwd, flows_bwd)
