"""End-to-end space-time super-resolution network."""

import torch
import torch.nn as nn

from ._validation import check_rate, check_scale
from .flow_estimator import CountingFlow
from .propagation import BidirectionalPropagator, FeatureExtractor
from .temporal import TemporalModulation
from .upsampling import CascadeUpsampler

MODES = ("continuous", "fix")
FIXED_SCALE = 4.0


def output_plan(n_frames, rate):
    """``(pair_index, t)`` for every output frame in temporal order.

    Inputs sit at ``t == 0``; ``rate - 1`` frames at ``t = j / rate`` follow each
    input except the last, giving ``rate * (n_frames - 1) + 1`` frames.
    """
    plan = []
    for i in range(n_frames):
        plan.append((i, 0.0))
        if i < n_frames - 1:
            plan.extend((i, j / rate) for j in range(1, rate))
    return plan


class STVSRNet(nn.Module):
    """Bidirectional propagation, forward-warping-guided temporal interpolation
    and cascaded arbitrary-scale upsampling.

    Parameters
    ----------
    channels : int
        Feature width.
    mode : {"continuous", "fix"}
        ``fix`` drops scale conditioning and only accepts a x4 spatial scale.
    use_fwg, use_dcn : bool
        Ablation switches of the temporal stage (forward-warp guidance and
        deformable refinement).
    tied : bool
        Share weights between the mirrored halves of the propagation and
        temporal stages.
    flow_estimator : callable, optional
        ``(frames_a, frames_b) -> flow`` on (B, 3, H, W) tensors.
    """

    def __init__(self, channels=32, mode="continuous", use_fwg=True, use_dcn=True,
                 tied=False, n_extract_blocks=5, n_prop_blocks=2, flow_estimator=None):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.use_fwg = use_fwg
        self.extractor = FeatureExtractor(channels, n_extract_blocks, conditioned=mode == "continuous")
        self.propagator = BidirectionalPropagator(channels, n_blocks=n_prop_blocks, tied=tied)
        self.temporal = TemporalModulation(channels, use_fwg=use_fwg, use_dcn=use_dcn, tied=tied)
        self.upsampler = CascadeUpsampler(channels, use_offsets=mode == "continuous")
        self.flow = CountingFlow(flow_estimator)
        self.interpolation_calls = 0

    def segments(self):
        """Named parameter groups as stored in checkpoints."""
        return {
            "propagation": nn.ModuleDict({"extractor": self.extractor, "propagator": self.propagator}),
            "temporal": self.temporal,
            "upsampler": self.upsampler,
        }

    def validate_scale(self, scale_h, scale_w=None):
        scale_h, scale_w = check_scale(scale_h, scale_w)
        if self.mode == "fix" and (scale_h, scale_w) != (FIXED_SCALE, FIXED_SCALE):
            raise ValueError(
                f"a model trained in fix mode only supports x{FIXED_SCALE:g}, got {(scale_h, scale_w)}"
            )
        return scale_h, scale_w

    def compute_flows(self, lr):
        """Flows between adjacent inputs, one estimator call per pair."""
        fwd, bwd = [], []
        for i in range(lr.shape[1] - 1):
            v01, v10 = self.flow.pair(lr[:, i], lr[:, i + 1])
            fwd.append(v01)
            bwd.append(v10)
        return fwd, bwd

    def iter_frames(self, lr, rate, scale_h, scale_w=None, flows=None):
        """Yield ``(index, pair_index, t, hr)`` for every output frame in order.

        ``lr`` is (B, N, 3, H, W) in [0, 1]. Frames at input timestamps are
        decoded from propagated features directly; only the intermediate ones
        go through temporal modulation.
        """
        rate = check_rate(rate)
        scale_h, scale_w = self.validate_scale(scale_h, scale_w)
        if lr.dim() == 4:
            lr = lr.unsqueeze(0)
        n = lr.shape[1]
        if n == 0:
            raise ValueError("empty input sequence")
        if n < 2 and rate > 1:
            raise ValueError("temporal upsampling needs at least two input frames")
        if flows is None:
            flows = self.compute_flows(lr)
        fwd, bwd = flows
        feats = self.extractor(lr.flatten(0, 1), scale_h, scale_w)
        feats = list(feats.view(lr.shape[0], n, *feats.shape[1:]).unbind(1))
        index = 0
        prev = None
        for i, feat in enumerate(self.propagator.iter_propagate(feats, fwd, bwd)):
            if prev is not None:
                i0, i1 = lr[:, i - 1], lr[:, i]
                for j in range(1, rate):
                    t = j / rate
                    self.interpolation_calls += 1
                    ft = self.temporal(prev, feat, fwd[i - 1], bwd[i - 1], t, frames=(i0, i1))
                    base = (1 - t) * i0 + t * i1
                    yield index, i - 1, t, self.upsampler(ft, scale_h, scale_w, base)
                    del ft
                    index += 1
            yield index, i, 0.0, self.upsampler(feat, scale_h, scale_w, lr[:, i])
            index += 1
            prev = feat

    def forward(self, lr, rate, scale_h, scale_w=None, flows=None):
        """Return ``(frames, plan, flows)`` with frames of shape (B, M, 3, H', W')."""
        if lr.dim() == 4:
            lr = lr.unsqueeze(0)
        if flows is None:
            flows = self.compute_flows(lr)
        outs = [hr for _, _, _, hr in self.iter_frames(lr, rate, scale_h, scale_w, flows)]
        return torch.stack(outs, dim=1), output_plan(lr.shape[1], rate), flows
