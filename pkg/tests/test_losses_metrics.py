import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_differences, max_relative_error
from stvsr.losses import LossReport, charbonnier, clip_loss, inter_loss, total_loss
from stvsr.metrics import psnr, psnr_y, ssim


def test_charbonnier_examples():
    x = torch.rand(3, 4, 4)
    assert float(charbonnier(x, x, 1e-3)) == pytest.approx(1e-3)
    one = torch.zeros(1, 1, 1)
    assert float(charbonnier(one + 3, one, 1e-9)) == pytest.approx(3.0)
    assert float(charbonnier(x + 0.3, x, 1e-3)) == pytest.approx(math.sqrt(0.09 + 1e-6), rel=1e-5)
    with pytest.raises(ValueError):
        charbonnier(x, x, 0.0)
    with pytest.raises(ValueError):
        charbonnier(x, x[:2])


@given(st.integers(0, 2**31 - 1))
def test_charbonnier_lower_bound(seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(3, 5, 5, generator=gen, dtype=torch.float64)
    y = torch.rand(3, 5, 5, generator=gen, dtype=torch.float64)
    assert float(charbonnier(x, y)) > 1e-3
    assert float(charbonnier(x, x)) == pytest.approx(1e-3, rel=1e-12)


def test_inter_loss_examples():
    x = torch.rand(3, 4, 4)
    assert float(inter_loss(x, x, x, 0.1)) == 0.0
    gt = torch.zeros(1, 2, 5)
    pred = gt + 0.2
    pseudo = gt + 0.1
    assert float(inter_loss(pred, gt, pseudo, 0.1)) == pytest.approx(0.21)
    assert float(inter_loss(pred, gt, pseudo, 0.0)) == pytest.approx(0.2)


def test_inter_loss_monotone_in_alpha():
    gen = torch.Generator().manual_seed(0)
    pred, gt, pseudo = (torch.rand(3, 6, 6, generator=gen) for _ in range(3))
    values = [float(inter_loss(pred, gt, pseudo, a)) for a in np.linspace(0, 1, 7)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_inter_loss_does_not_backpropagate_into_pseudo():
    pred = torch.rand(3, 4, 4, requires_grad=True)
    pseudo = torch.rand(3, 4, 4, requires_grad=True)
    inter_loss(pred, torch.rand(3, 4, 4), pseudo, 0.1).backward()
    assert pseudo.grad is None and pred.grad is not None


def test_total_loss_examples():
    e = [torch.tensor(0.5), torch.tensor(0.5)]
    r = total_loss(e, [torch.tensor(0.3)])
    assert float(r.loss_total) == pytest.approx(0.8)
    r = total_loss(e)
    assert float(r.loss_total) == float(r.loss_exist) == 0.5 and float(r.loss_inter) == 0
    with pytest.raises(ValueError):
        total_loss([], [torch.tensor(1.0)])
    assert isinstance(r, LossReport) and set(r.as_floats()) == {"loss_exist", "loss_inter", "loss_total"}


def test_clip_loss_groups_and_pseudo_only_touches_inter():
    gen = torch.Generator().manual_seed(0)
    preds, gts = torch.rand(1, 3, 3, 4, 4, generator=gen), torch.rand(1, 3, 3, 4, 4, generator=gen)
    existing = [True, False, True]
    with_p = clip_loss(preds, gts, existing, {1: torch.rand(1, 3, 4, 4, generator=gen)}, 0.1)
    without = clip_loss(preds, gts, existing, None, 0.1)
    assert float(with_p.loss_exist) == float(without.loss_exist)
    assert float(with_p.loss_inter) != float(without.loss_inter)
    expected_exist = (charbonnier(preds[:, 0], gts[:, 0]) + charbonnier(preds[:, 2], gts[:, 2])) / 2
    assert float(without.loss_exist) == pytest.approx(float(expected_exist))


def test_gradcheck_charbonnier_and_inter_loss():
    gen = torch.Generator().manual_seed(3)
    pred, gt, pseudo = (torch.rand(1, 3, 8, 8, generator=gen, dtype=torch.float64) for _ in range(3))
    for a, n in zip(*central_differences(lambda p, g: charbonnier(p, g), [pred, gt])):
        assert max_relative_error(a, n) < 1e-4
    a, n = central_differences(lambda p: inter_loss(p, gt, pseudo, 0.1), [pred])
    assert max_relative_error(a[0], n[0]) < 1e-4


def test_psnr_examples():
    x = np.random.default_rng(0).random((3, 8, 8))
    assert psnr(x, x) == math.inf
    assert psnr_y(x, x) == math.inf
    assert psnr(np.full((3, 4, 4), 0.1), np.zeros((3, 4, 4))) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(x, x[:2])


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    gt = rng.random((3, 32, 32))
    noise = rng.standard_normal(gt.shape)
    values = [psnr(gt + s * noise, gt) for s in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_ssim_identity_and_range():
    rng = np.random.default_rng(2)
    x = rng.random((3, 32, 32))
    assert ssim(x, x) == 1.0
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    assert 0 < ssim(y, x) < 1
