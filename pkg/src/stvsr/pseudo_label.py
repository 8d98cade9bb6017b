"""Flow-guided patch pseudo labels for interpolated frames.

The two reference frames are warped rigidly, patch by patch, to the
intermediate time using patch-averaged intermediate flows. For every patch the
candidate whose census descriptors are closest (L2) to the prediction's is
copied into the pseudo label, so exactly two candidates are compared per patch.
"""

import torch
import torch.nn.functional as F

from ._validation import batched, check_same_spatial
from .flow_estimator import to_luma
from .flow_ops import avg_pool_flow, backward_warp, reverse_flow_to_t

DEFAULT_PATCH = 4

# (dy, dx) of the eight 3x3 neighbours, row-major
CENSUS_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class SearchCounter:
    """Counts candidate-patch distance evaluations."""

    def __init__(self):
        self.evaluations = 0


@batched
def census_transform(img):
    """3x3 census descriptors in {-1, +1}: +1 where the centre is >= the neighbour.

    RGB input is converted to luma first; borders replicate.
    """
    lum = to_luma(img)
    h, w = lum.shape[-2:]
    pad = F.pad(lum, (1, 1, 1, 1), mode="replicate")
    chans = []
    for dy, dx in CENSUS_NEIGHBOURS:
        nb = pad[..., 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        chans.append(torch.where(lum >= nb, 1.0, -1.0).to(lum.dtype))
    return torch.cat(chans, dim=1)


def expand_patches(grid, patch_size, size):
    """Repeat every grid cell over a ``patch_size`` square and crop to ``size``."""
    up = grid.repeat_interleave(patch_size, dim=-2).repeat_interleave(patch_size, dim=-1)
    return up[..., : size[0], : size[1]]


@batched
def warp_patches(i0, i1, v_t0_avg, v_t1_avg, patch_size=DEFAULT_PATCH):
    """Backward-warp both frames with one flow vector per patch (rigid patches)."""
    check_same_spatial(i0, i1, "reference frames")
    h, w = i0.shape[-2:]
    grid = (-(-h // patch_size), -(-w // patch_size))
    for v in (v_t0_avg, v_t1_avg):
        if tuple(v.shape[-2:]) != grid:
            raise ValueError(
                f"patch flow must be {grid} for {h}x{w} frames and patch {patch_size}, "
                f"got {tuple(v.shape[-2:])}"
            )
    w0 = backward_warp(i0, expand_patches(v_t0_avg, patch_size, (h, w)))
    w1 = backward_warp(i1, expand_patches(v_t1_avg, patch_size, (h, w)))
    return w0, w1


def _patch_sums(x, p):
    h, w = x.shape[-2:]
    x = F.pad(x, (0, (-w) % p, 0, (-h) % p))
    return F.avg_pool2d(x, p) * (p * p)


@torch.no_grad()
def select_pseudo(pred, w0, w1, patch_size=DEFAULT_PATCH, counter=None):
    """Assemble the pseudo label from the census-closest candidate per patch.

    Returns ``(pseudo, source_id)`` with ``source_id`` of shape
    (B, 1, ceil(H/p), ceil(W/p)) holding 0 or 1; ties go to candidate 0.
    """
    single = pred.dim() == 3
    if single:
        pred, w0, w1 = pred.unsqueeze(0), w0.unsqueeze(0), w1.unsqueeze(0)
    if not (pred.shape == w0.shape == w1.shape):
        raise ValueError("prediction and candidates must share a shape")
    pred = pred.detach()
    p = int(patch_size)
    cp = census_transform(pred)
    d0 = _patch_sums(((census_transform(w0) - cp) ** 2).sum(1, keepdim=True), p)
    d1 = _patch_sums(((census_transform(w1) - cp) ** 2).sum(1, keepdim=True), p)
    source = (d1 < d0).long()
    if counter is not None:
        counter.evaluations += 2 * source.numel()
    pick = expand_patches(source, p, pred.shape[-2:]).bool()
    pseudo = torch.where(pick, w1, w0)
    if single:
        return pseudo[0], source[0]
    return pseudo, source


@torch.no_grad()
def make_pseudo_label(i0, i1, pred, v01, v10, t, patch_size=DEFAULT_PATCH,
                      counter=None, return_source=False):
    """Pseudo label for the prediction at time ``t`` between ``i0`` and ``i1``.

    ``v01``/``v10`` are the already-estimated flows between the two frames at
    their resolution; they are reversed to time ``t``, pooled per patch, and
    used to warp the frames rigidly before selection.
    """
    v_t0, v_t1 = reverse_flow_to_t(v01, v10, t)
    w0, w1 = warp_patches(
        i0, i1, avg_pool_flow(v_t0, patch_size), avg_pool_flow(v_t1, patch_size), patch_size
    )
    pseudo, source = select_pseudo(pred, w0, w1, patch_size, counter)
    return (pseudo, source) if return_source else pseudo
