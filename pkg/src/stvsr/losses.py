"""Training objectives."""

from dataclasses import dataclass

import torch

CHARBONNIER_EPS = 1e-3
DEFAULT_ALPHA = 0.1


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def charbonnier(pred, gt, eps=CHARBONNIER_EPS):
    """Mean of ``sqrt((pred - gt)^2 + eps^2)`` over all elements."""
    _check_pair(pred, gt)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return torch.sqrt((pred - gt) ** 2 + eps * eps).mean()


def inter_loss(pred, gt, pseudo, alpha=DEFAULT_ALPHA):
    """``L1(pred, gt) + alpha * L1(pred, pseudo)``; the pseudo label is a constant."""
    _check_pair(pred, gt)
    _check_pair(pred, pseudo)
    loss = (pred - gt).abs().mean()
    if alpha:
        loss = loss + alpha * (pred - pseudo.detach()).abs().mean()
    return loss


@dataclass
class LossReport:
    loss_exist: torch.Tensor
    loss_inter: torch.Tensor
    loss_total: torch.Tensor
    alpha: float = DEFAULT_ALPHA
    eps: float = CHARBONNIER_EPS

    def as_floats(self):
        return {
            "loss_exist": float(self.loss_exist.detach()),
            "loss_inter": float(self.loss_inter.detach()),
            "loss_total": float(self.loss_total.detach()),
        }


def total_loss(exist_terms, inter_terms=(), alpha=DEFAULT_ALPHA, eps=CHARBONNIER_EPS):
    """Combine per-frame terms: group means of each kind, then their sum.

    ``exist_terms`` are per-frame Charbonnier values of pre-existing frames and
    ``inter_terms`` per-frame :func:`inter_loss` values of interpolated frames.
    """
    exist_terms, inter_terms = list(exist_terms), list(inter_terms)
    if not exist_terms:
        raise ValueError("a clip needs at least one pre-existing frame term")
    loss_exist = torch.stack(exist_terms).mean()
    if inter_terms:
        loss_inter = torch.stack(inter_terms).mean()
    else:
        loss_inter = torch.zeros((), dtype=loss_exist.dtype, device=loss_exist.device)
    return LossReport(loss_exist, loss_inter, loss_exist + loss_inter, alpha, eps)


def clip_loss(preds, gts, existing, pseudos=None, alpha=DEFAULT_ALPHA, eps=CHARBONNIER_EPS):
    """Loss report for (B, M, 3, H, W) predictions against targets.

    ``existing`` is a length-M sequence of booleans; ``pseudos`` maps
    interpolated frame indices to their pseudo labels. Without a pseudo label
    (or with ``alpha == 0``) an interpolated frame is supervised by plain L1.
    """
    _check_pair(preds, gts)
    pseudos = pseudos or {}
    exist_terms, inter_terms = [], []
    for m, is_existing in enumerate(existing):
        p, g = preds[:, m], gts[:, m]
        if is_existing:
            exist_terms.append(charbonnier(p, g, eps))
        elif m in pseudos and alpha:
            inter_terms.append(inter_loss(p, g, pseudos[m], alpha))
        else:
            inter_terms.append(inter_loss(p, g, g, 0.0))
    return total_loss(exist_terms, inter_terms, alpha, eps)
