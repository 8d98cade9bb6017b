"""Estimator front-end: training loop, prediction and scoring."""

import math
import time

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import checkpoint as ckpt_io
from ._validation import check_rate, check_scale, check_sequence
from .data import FrameSequence, bicubic_downscale, ground_truth, hr_crop_size
from .flow_ops import resize_flow
from .losses import clip_loss
from .metrics import psnr
from .model import FIXED_SCALE, STVSRNet, output_plan
from .pseudo_label import make_pseudo_label
from .upsampling import output_size, resample

DEFAULT_SCALES = tuple(round(2.0 + 0.2 * i, 1) for i in range(11))
MODEL_PARAMS = ("channels", "mode", "use_fwg", "use_dcn", "tied")


def _frames(x):
    return x.frames if isinstance(x, FrameSequence) else check_sequence(x)


def _clips(X, min_frames):
    if isinstance(X, (np.ndarray, FrameSequence)) or torch.is_tensor(X):
        X = [X]
    clips = [_frames(c) for c in X]
    if not clips:
        raise ValueError("no training clips")
    for i, c in enumerate(clips):
        if len(c) < min_frames:
            raise ValueError(f"clip {i} has {len(c)} frames, need at least {min_frames}")
    return clips


class SpaceTimeSR(BaseEstimator):
    """Continuous space-time video super-resolution.

    ``fit`` trains on HR clips (each (N, 3, H, W) in [0, 1]) by degrading them
    on the fly: every ``rate``-th frame is kept and bicubic-downsampled by a
    scale drawn from ``scale_set`` (fixed at 4 for ``mode="fix"``), and the
    dropped frames become interpolation targets. ``predict`` maps an LR
    sequence to ``rate * (N - 1) + 1`` frames of size ``ceil(H * S)``.

    Parameters
    ----------
    channels : int
        Feature width of the network.
    mode : {"continuous", "fix"}
        ``fix`` disables scale conditioning and trains and infers at x4 only.
    use_fwg, use_dcn, use_fgl : bool
        Ablation switches: forward-warp guidance, deformable refinement in the
        temporal stage, and the flow-guided pseudo-label loss.
    tied : bool
        Share the weights of mirrored branches (time-reversal equivariant).
    n_iter, batch_size, crop_size : int
        Optimisation steps, clips per step and the HR crop side.
    lr_init, lr_final, betas :
        Adam settings; the learning rate follows a cosine from ``lr_init`` to
        ``lr_final``.
    scale_set : sequence of float, optional
        Spatial scales sampled per step in continuous mode.
    rate : int
        Temporal factor used for training and as the default at inference.
    alpha, patch_size, eps :
        Pseudo-label weight, pseudo-label patch side, Charbonnier epsilon.
    flip_prob : float
        Probability of flipping a training clip, drawn independently for
        the time, vertical and horizontal axes.
    seed : int
        Seeds all sampling and the weight initialisation.
    """

    def __init__(self, channels=32, mode="continuous", use_fwg=True, use_dcn=True,
                 use_fgl=True, tied=False, n_iter=2000, batch_size=2, crop_size=64,
                 lr_init=2e-4, lr_final=1e-7, betas=(0.9, 0.999), scale_set=None,
                 rate=2, alpha=0.1, patch_size=4, eps=1e-3, flip_prob=0.5, seed=0,
                 verbose=0):
        self.channels = channels
        self.mode = mode
        self.use_fwg = use_fwg
        self.use_dcn = use_dcn
        self.use_fgl = use_fgl
        self.tied = tied
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.lr_init = lr_init
        self.lr_final = lr_final
        self.betas = betas
        self.scale_set = scale_set
        self.rate = rate
        self.alpha = alpha
        self.patch_size = patch_size
        self.eps = eps
        self.flip_prob = flip_prob
        self.seed = seed
        self.verbose = verbose

    # -- construction -------------------------------------------------
    def _scales(self):
        if self.mode == "fix":
            return (FIXED_SCALE,)
        scales = DEFAULT_SCALES if self.scale_set is None else tuple(self.scale_set)
        if not scales:
            raise ValueError("scale_set is empty")
        for s in scales:
            check_scale(s)
        return scales

    def _build(self):
        return STVSRNet(self.channels, self.mode, self.use_fwg, self.use_dcn, self.tied)

    def init_model(self):
        """Build an untrained network (identity-like residual paths) without fitting."""
        torch.manual_seed(self.seed)
        self.model_ = self._build().eval()
        self.n_iter_ = 0
        return self

    def lr_at(self, iteration):
        """Cosine-annealed learning rate for the 0-based ``iteration``."""
        if self.n_iter <= 1:
            return self.lr_init
        c = 0.5 * (1 + math.cos(math.pi * iteration / (self.n_iter - 1)))
        return self.lr_final + (self.lr_init - self.lr_final) * c

    def config(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()}

    # -- training -----------------------------------------------------
    def _sample_batch(self, clips, rng):
        scale = float(rng.choice(self._scales()))
        n_frames = min(len(c) for c in clips)
        size = min(min(c.shape[-2:]) for c in clips)
        crop = min(self.crop_size or size, size)
        ch, cw = hr_crop_size(crop, crop, scale, scale)
        picks = rng.choice(len(clips), self.batch_size, replace=len(clips) < self.batch_size)
        batch = []
        for k in picks:
            c = clips[k]
            t0 = rng.integers(0, len(c) - n_frames + 1)
            y0 = rng.integers(0, c.shape[-2] - ch + 1)
            x0 = rng.integers(0, c.shape[-1] - cw + 1)
            seq = c[t0 : t0 + n_frames, :, y0 : y0 + ch, x0 : x0 + cw]
            if self.flip_prob > 0:
                axes = tuple(a for a in (0, 2, 3) if rng.random() < self.flip_prob)
                seq = np.flip(seq, axes) if axes else seq
            batch.append(np.ascontiguousarray(seq))
        return torch.from_numpy(np.stack(batch)), scale

    def _degrade_batch(self, hr, scale):
        keep = list(range(0, hr.shape[1], self.rate))
        b, n = hr.shape[0], len(keep)
        small = bicubic_downscale(hr[:, keep].flatten(0, 1), scale, scale)
        m = self.rate * (n - 1) + 1
        return small.view(b, n, *small.shape[1:]), hr[:, :m]

    def _pseudo_labels(self, preds, gts, plan, flows):
        fwd, bwd = flows
        size = preds.shape[-2:]
        pseudos = {}
        for m, (i, t) in enumerate(plan):
            if t == 0.0:
                continue
            i0, i1 = gts[:, i * self.rate], gts[:, (i + 1) * self.rate]
            pseudos[m] = make_pseudo_label(
                i0, i1, preds[:, m].detach(), resize_flow(fwd[i], size), resize_flow(bwd[i], size),
                t, self.patch_size,
            )
        return pseudos

    def train_step(self, hr, scale):
        """Loss report of one (B, N, 3, H, W) HR batch at ``scale`` (no optimiser step)."""
        lr, gts = self._degrade_batch(hr, scale)
        preds, plan, flows = self.model_(lr, self.rate, scale, scale)
        existing = [t == 0.0 for _, t in plan]
        use_pseudo = self.use_fgl and self.alpha > 0
        pseudos = self._pseudo_labels(preds, gts, plan, flows) if use_pseudo else None
        return clip_loss(preds, gts, existing, pseudos, self.alpha if use_pseudo else 0.0, self.eps)

    def fit(self, X, y=None, callback=None):
        """Train on a list of HR clips. ``callback(iteration, record)`` runs after each step."""
        self.rate = check_rate(self.rate)
        clips = _clips(X, self.rate + 1)
        scales = self._scales()
        torch.manual_seed(self.seed)
        rng = np.random.default_rng(self.seed)
        self.model_ = self._build()
        self.model_.train()
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.lr_init, betas=tuple(self.betas))
        self.loss_log_ = []
        self.scales_ = scales
        start = time.perf_counter()
        for it in range(self.n_iter):
            lr_now = self.lr_at(it)
            for group in opt.param_groups:
                group["lr"] = lr_now
            hr, scale = self._sample_batch(clips, rng)
            report = self.train_step(hr, scale)
            values = report.as_floats()
            if not all(math.isfinite(v) for v in values.values()):
                raise FloatingPointError(
                    f"training diverged at iteration {it} (scale {scale}): {values}"
                )
            opt.zero_grad(set_to_none=True)
            report.loss_total.backward()
            opt.step()
            record = {"iteration": it, **values, "lr": lr_now, "scale": scale}
            self.loss_log_.append(record)
            if callback is not None:
                callback(it, record)
            if self.verbose and (it % self.verbose == 0 or it == self.n_iter - 1):
                print(
                    f"iter {it:5d}  loss {values['loss_total']:.4f}  exist {values['loss_exist']:.4f}"
                    f"  inter {values['loss_inter']:.4f}  lr {lr_now:.2e}  S {scale:.1f}"
                    f"  {time.perf_counter() - start:.0f}s",
                    flush=True,
                )
        self.n_iter_ = self.n_iter
        self.model_.eval()
        return self

    # -- inference ----------------------------------------------------
    def iter_predict(self, X, rate=None, scale_h=4.0, scale_w=None):
        """Yield ``(index, t_global, frame)`` with frames as (3, H', W') numpy arrays."""
        check_is_fitted(self, "model_")
        rate = check_rate(self.rate if rate is None else rate)
        lr = torch.from_numpy(_frames(X)).unsqueeze(0)
        self.model_.eval()
        with torch.no_grad():
            for index, pair, t, hr in self.model_.iter_frames(lr, rate, scale_h, scale_w):
                yield index, pair + t, hr[0].numpy().copy()

    def predict(self, X, rate=None, scale_h=4.0, scale_w=None):
        """Upscale an LR sequence; returns (R * (N - 1) + 1, 3, H', W')."""
        return np.stack([f for _, _, f in self.iter_predict(X, rate, scale_h, scale_w)])

    def score(self, X, y=None, rate=None, scale=4.0):
        """Mean PSNR over all output frames of HR clips degraded at ``scale``."""
        return evaluate_clips(self, X, self.rate if rate is None else rate, scale)["all"]

    # -- persistence --------------------------------------------------
    def save(self, path):
        check_is_fitted(self, "model_")
        ckpt = ckpt_io.from_model(self.model_, self.config(), getattr(self, "n_iter_", 0))
        ckpt_io.save(ckpt, path)

    @classmethod
    def load(cls, path):
        ckpt = ckpt_io.load(path)
        params = {k: tuple(v) if k == "betas" else v for k, v in ckpt.config.items()}
        est = cls(**params)
        est.model_ = ckpt_io.apply(ckpt, est._build())
        est.model_.eval()
        est.n_iter_ = ckpt.iteration
        return est


class BicubicBaseline(BaseEstimator):
    """Per-frame bicubic upscaling; intermediate frames blend their neighbours linearly in time."""

    def __init__(self, rate=2):
        self.rate = rate

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def iter_predict(self, X, rate=None, scale_h=4.0, scale_w=None):
        rate = check_rate(self.rate if rate is None else rate)
        scale_h, scale_w = check_scale(scale_h, scale_w)
        frames = torch.from_numpy(_frames(X))
        n = len(frames)
        if n < 2 and rate > 1:
            raise ValueError("temporal upsampling needs at least two input frames")
        size = output_size(*frames.shape[-2:], scale_h, scale_w)
        up = resample(frames, size, scale_h, scale_w, mode="bicubic").clamp(0, 1)
        for index, (i, t) in enumerate(output_plan(n, rate)):
            f = up[i] if t == 0.0 else (1 - t) * up[i] + t * up[i + 1]
            yield index, i + t, f.numpy()

    def predict(self, X, rate=None, scale_h=4.0, scale_w=None):
        return np.stack([f for _, _, f in self.iter_predict(X, rate, scale_h, scale_w)])

    def score(self, X, y=None, rate=None, scale=4.0):
        return evaluate_clips(self, X, self.rate if rate is None else rate, scale)["all"]


def evaluate_clips(estimator, clips, rate=2, scale=4.0):
    """Mean PSNR per frame kind of ``estimator`` on HR clips degraded at ``(rate, scale)``."""
    from .data import degrade

    scores = {"existing": [], "interpolated": []}
    for clip in _clips(clips, 1):
        lr = degrade(clip, scale, scale, rate)
        gts, kinds = ground_truth(clip, scale, scale, rate)
        for (_, _, frame), gt, kind in zip(estimator.iter_predict(lr, rate, scale, scale), gts, kinds):
            scores[kind].append(psnr(frame, gt))
    out = {k: float(np.mean(v)) for k, v in scores.items() if v}
    out["all"] = float(np.mean(scores["existing"] + scores["interpolated"]))
    return out
