import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import pixel_shuffle_loops, relative_offset_exact
from stvsr.upsampling import (
    CascadeUpsampler,
    ScaleAwareBlock,
    ScaleMLP,
    output_size,
    pixel_shuffle,
    relative_offsets,
    resample,
    scale_mlp,
    space_to_depth,
    upsample,
)

# (sigma, scale) points evaluated by hand with exact rationals
OFFSET_POINTS = [
    (0, 2.0), (1, 2.0), (3, 2.0), (0, 1.0), (5, 1.0), (0, 4.0), (2, 4.0), (7, 4.0),
    (0, 2.5), (1, 2.5), (4, 2.5), (9, 2.8), (13, 2.8), (3, 3.2), (17, 3.6), (6, 1.5),
    (11, 7.9), (40, 8.0), (2, 1.1), (25, 6.3),
]


def test_pixel_shuffle_matches_loops_on_all_small_shapes():
    rng = np.random.default_rng(0)
    for r in (1, 2):
        for c, h, w in itertools.product(range(1, 9), range(1, 5), range(1, 5)):
            if c % (r * r):
                continue
            x = rng.standard_normal((c, h, w)).astype(np.float32)
            out = pixel_shuffle(torch.from_numpy(x), r).numpy()
            assert np.array_equal(out, pixel_shuffle_loops(x, r)), (c, h, w, r)


def test_pixel_shuffle_smallest_instance_and_torch_agreement():
    x = torch.tensor([1.0, 2.0, 3.0, 4.0]).view(4, 1, 1)
    assert pixel_shuffle(x, 2).tolist() == [[[1.0, 2.0], [3.0, 4.0]]]
    y = torch.randn(2, 32, 3, 5)
    assert torch.equal(pixel_shuffle(y, 4), torch.nn.functional.pixel_shuffle(y, 4))
    with pytest.raises(ValueError):
        pixel_shuffle(torch.zeros(3, 2, 2), 2)


@pytest.mark.parametrize("r", [2, 4, 8])
def test_pixel_shuffle_bijection(r):
    x = torch.randn(2, 3 * r * r, 3, 2)
    y = pixel_shuffle(x, r)
    assert torch.equal(space_to_depth(y, r), x)
    assert torch.equal(torch.sort(y.flatten()).values, torch.sort(x.flatten()).values)


def test_relative_offsets_match_hand_evaluation():
    for sigma, s in OFFSET_POINTS:
        n = sigma + 1
        dis = relative_offsets(n, n, s, s, dtype=torch.float64).dis
        _, expected = relative_offset_exact(sigma, s)
        assert float(dis[0, 0, sigma]) == pytest.approx(float(expected), abs=1e-12)
        assert float(dis[1, sigma, 0]) == pytest.approx(float(expected), abs=1e-12)


def test_relative_offsets_examples():
    lr, dis = relative_offset_exact(0, 2.0)
    assert float(lr) == -0.25 and float(dis) == -0.25
    # at unit scale LR(s) = s and floor(s + 0.5) = s, so every offset is zero
    m = relative_offsets(6, 9, 1.0, 1.0)
    assert torch.all(m.dis == 0.0)
    assert torch.equal(m.coords[0, 0], torch.arange(9))
    with pytest.raises(ValueError):
        relative_offsets(4, 4, 0.0, 2.0)


def test_relative_offsets_range_over_random_scales():
    rng = np.random.default_rng(7)
    for sh, sw in rng.uniform(1.0, 8.0, size=(1000, 2)):
        d = relative_offsets(*output_size(13, 11, sh, sw), sh, sw).dis
        assert float(d.min()) >= -0.5 and float(d.max()) < 0.5


@given(st.integers(1, 40), st.integers(1, 40), st.floats(1.0, 8.0), st.floats(1.0, 8.0))
def test_output_size_is_ceil(h, w, sh, sw):
    assert output_size(h, w, sh, sw) == (math.ceil(round(h * sh, 6)), math.ceil(round(w * sw, 6)))


def test_output_size_float_noise():
    assert output_size(10, 10, 2.2, 2.2) == (22, 22)
    assert output_size(32, 32, 2.5, 2.5) == (80, 80)


def test_scale_mlp_zero_at_init_and_scale_sensitive_after_step():
    mlp = ScaleMLP()
    off = relative_offsets(12, 12, 3.0, 3.0)
    assert torch.equal(scale_mlp(mlp, off, 3.0, 3.0), torch.zeros(1, 2, 12, 12))
    opt = torch.optim.SGD(mlp.parameters(), lr=0.5)
    target = torch.randn(1, 2, 12, 12)
    for s in (2.0, 4.0):
        opt.zero_grad()
        ((mlp(off.dis, s, s) - target) ** 2).mean().backward()
        opt.step()
    assert not torch.allclose(mlp(off.dis, 2.0, 2.0), mlp(off.dis, 4.0, 4.0))


def test_scale_aware_block_degenerate_and_sensitive():
    torch.manual_seed(0)
    blk = ScaleAwareBlock(8)
    x = torch.randn(1, 8, 6, 6)
    plain = x + blk.conv2(blk.act(blk.conv1(x)))
    assert torch.allclose(blk(x, 2.0, 2.0), plain)
    assert torch.allclose(blk(x, 2.0, 2.0), blk(x, 4.0, 4.0))
    opt = torch.optim.SGD(blk.parameters(), lr=0.1)
    opt.zero_grad()
    (blk(x, 2.0, 2.0) ** 2).mean().backward()
    opt.step()
    assert not torch.allclose(blk(x, 2.0, 2.0), blk(x, 4.0, 4.0))
    fixed = ScaleAwareBlock(8, conditioned=False)
    assert fixed.scale_gain(2.0, 2.0, x) is None


def test_resample_factor_one_at_unit_scale_is_identity():
    x = torch.rand(1, 3, 7, 5)
    for mode in ("bilinear", "bicubic"):
        assert torch.allclose(resample(x, (7, 5), 1.0, 1.0, mode=mode), x, atol=1e-6)


def test_resample_exact_branch_needs_no_interpolation():
    # a x2 branch sampled at S=2 lands exactly on its own pixel centres
    x = torch.rand(1, 2, 8, 6)
    assert torch.allclose(resample(x, (8, 6), 2.0, 2.0, factor=2), x, atol=1e-6)


@pytest.mark.parametrize("mode", ["bilinear", "bicubic"])
def test_upsampler_zero_tail_returns_base_interpolation(mode):
    torch.manual_seed(0)
    up = CascadeUpsampler(8, base_mode=mode)
    feat, base = torch.randn(1, 8, 10, 12), torch.rand(1, 3, 10, 12)
    out = upsample(up, feat, 2.5, 1.7, base)
    ref = resample(base, output_size(10, 12, 2.5, 1.7), 2.5, 1.7, mode=mode).clamp(0, 1)
    assert torch.equal(out, ref)
    if mode == "bilinear":
        torch_ref = torch.nn.functional.interpolate(base, scale_factor=2, mode="bilinear")
        assert torch.allclose(up(feat, 2.0, 2.0, base), torch_ref.clamp(0, 1), atol=1e-6)


@pytest.mark.parametrize("scale", [(1.0, 1.0), (2.0, 2.0), (2.5, 2.5), (2.0, 3.5), (3.7, 1.3), (8.0, 8.0)])
def test_upsampler_output_shapes(scale):
    up = CascadeUpsampler(8)
    with torch.no_grad():
        out = up(torch.randn(2, 8, 9, 7), *scale, torch.rand(2, 3, 9, 7))
    assert out.shape == (2, 3, *output_size(9, 7, *scale))
    assert float(out.min()) >= 0 and float(out.max()) <= 1


def test_upsampler_rejects_bad_scales_and_modes():
    up = CascadeUpsampler(8)
    for s in (0.5, 8.5, float("nan")):
        with pytest.raises(ValueError):
            up(torch.randn(1, 8, 4, 4), s, s, torch.rand(1, 3, 4, 4))
    with pytest.raises(ValueError):
        CascadeUpsampler(8, base_mode="nearest")


def test_upsampler_learns_residual():
    torch.manual_seed(0)
    up = CascadeUpsampler(8)
    feat, base = torch.randn(1, 8, 6, 6), torch.full((1, 3, 6, 6), 0.5)
    target = torch.full((1, 3, 18, 18), 0.6)
    opt = torch.optim.Adam(up.parameters(), lr=1e-2)
    first = None
    for _ in range(30):
        opt.zero_grad()
        loss = ((up(feat, 3.0, 3.0, base) - target) ** 2).mean()
        first = first if first is not None else loss.item()
        loss.backward()
        opt.step()
    assert loss.item() < 0.1 * first
