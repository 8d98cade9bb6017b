"""PSNR and SSIM on [0, 1] images laid out as (3, H, W)."""

import math

import numpy as np
from skimage.metrics import structural_similarity

LUMA = np.array([0.299, 0.587, 0.114])


def _as_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=(0, 0))
    return img.squeeze()


def psnr(pred, gt):
    """``10 log10(1 / MSE)``; identical inputs give ``inf``."""
    pred, gt = _as_pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_y(pred, gt):
    pred, gt = _as_pair(pred, gt)
    return psnr(luma(pred), luma(gt))


def ssim(pred, gt):
    """SSIM of the luma channels with an 11x11 Gaussian window (sigma 1.5)."""
    pred, gt = _as_pair(pred, gt)
    a, b = luma(pred), luma(gt)
    if np.array_equal(a, b):
        return 1.0
    return float(structural_similarity(
        a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False,
    ))
