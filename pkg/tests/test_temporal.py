import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from stvsr.flow_ops import forward_splat
from stvsr.temporal import (
    Blend,
    FeaturePyramid,
    OffsetHead,
    TemporalModulation,
    _dcn,
    blend,
    build_pyramid,
    fwga_warp_level,
    interpolate_feature,
    refine_level,
    upsample_offsets,
)


def randomize(module, seed=0, scale=0.1):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=gen) * scale)
    return module


def const_flow(dx, dy, b, h, w):
    f = torch.zeros(b, 2, h, w)
    f[:, 0], f[:, 1] = dx, dy
    return f


@pytest.mark.parametrize("size,expected", [(32, [32, 16, 8]), (33, [33, 17, 9])])
def test_pyramid_sizes(size, expected):
    levels = build_pyramid(FeaturePyramid(4), torch.randn(1, 4, size, size))
    assert [lv.shape[-1] for lv in levels] == expected


def test_pyramid_constant_input_stays_constant():
    levels = FeaturePyramid(4)(torch.full((1, 4, 16, 16), 0.7))
    for lv in levels:
        assert torch.allclose(lv, torch.full_like(lv, 0.7))
    with pytest.raises(ValueError):
        FeaturePyramid(4)(torch.zeros(1, 4, 3, 8))


def test_fwga_zero_flow():
    f0, f1 = torch.randn(1, 3, 6, 6), torch.randn(1, 3, 6, 6)
    z = torch.zeros(1, 2, 6, 6)
    f0t, f1t, m0, m1 = fwga_warp_level(f0, f1, z, z, 0.3)
    assert torch.allclose(f0t, 0.3 * f0, atol=1e-6)
    assert torch.allclose(f1t, 0.7 * f1, atol=1e-6)
    assert torch.all(m0 == 1) and torch.all(m1 == 1)


def test_fwga_hole_takes_other_side_scaled_before_fill():
    t = 0.25
    f0, f1 = torch.rand(1, 2, 6, 8) + 1, torch.rand(1, 2, 6, 8) + 1
    v01 = const_flow(8.0, 0, 1, 6, 8)  # t * v01 = 2 px right: two hole columns for side 0
    v10 = torch.zeros(1, 2, 6, 8)
    f0t, f1t, m0, m1 = fwga_warp_level(f0, f1, v01, v10, t)
    assert torch.all(m0[..., :2] == 0) and torch.all(m1 == 1)
    # filled with (1 - t) * splat(F1): the scaling happens before the fill
    assert torch.allclose(f0t[..., :2], (1 - t) * f1[..., :2], atol=1e-6)
    assert not torch.allclose(f0t[..., :2], f1[..., :2])
    w0, _ = forward_splat(f0, t * v01, mode="softmax", importance=torch.zeros(1, 1, 6, 8))
    assert torch.allclose(f0t[..., 2:], t * w0[..., 2:], atol=1e-6)


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
def test_fwga_mask_algebra(seed, t):
    gen = torch.Generator().manual_seed(seed)
    f0, f1 = torch.randn(1, 3, 7, 7, generator=gen), torch.randn(1, 3, 7, 7, generator=gen)
    v01 = torch.randn(1, 2, 7, 7, generator=gen) * 3
    v10 = torch.randn(1, 2, 7, 7, generator=gen) * 3
    z0, z1 = torch.randn(1, 1, 7, 7, generator=gen), torch.randn(1, 1, 7, 7, generator=gen)
    f0t, f1t, m0, m1 = fwga_warp_level(f0, f1, v01, v10, t, z0, z1)
    w0, mm0 = forward_splat(f0, t * v01, mode="softmax", importance=z0)
    w1, mm1 = forward_splat(f1, (1 - t) * v10, mode="softmax", importance=z1)
    assert torch.equal(m0, mm0) and torch.equal(m1, mm1)
    assert set(torch.unique(m0).tolist()) <= {0.0, 1.0}
    assert torch.allclose(f0t, t * w0 * m0 + (1 - t) * w1 * (1 - m0), atol=1e-6)
    assert torch.allclose(f1t, (1 - t) * w1 * m1 + t * w0 * (1 - m1), atol=1e-6)
    # a pixel stays empty only where both sides are holes
    both_holes = (m0 == 0) & (m1 == 0)
    assert torch.all(f0t[both_holes.expand_as(f0t)] == 0)
    assert torch.all(f1t[both_holes.expand_as(f1t)] == 0)


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
def test_fwga_swap_symmetry(seed, t):
    gen = torch.Generator().manual_seed(seed)
    f0, f1 = torch.randn(1, 3, 6, 6, generator=gen), torch.randn(1, 3, 6, 6, generator=gen)
    v01 = torch.randn(1, 2, 6, 6, generator=gen) * 2
    v10 = torch.randn(1, 2, 6, 6, generator=gen) * 2
    z0, z1 = torch.randn(1, 1, 6, 6, generator=gen), torch.randn(1, 1, 6, 6, generator=gen)
    a0, a1, m0, m1 = fwga_warp_level(f0, f1, v01, v10, t, z0, z1)
    b0, b1, n0, n1 = fwga_warp_level(f1, f0, v10, v01, 1 - t, z1, z0)
    assert torch.allclose(a0, b1, atol=1e-6) and torch.allclose(a1, b0, atol=1e-6)
    assert torch.equal(m0, n1) and torch.equal(m1, n0)


def test_refine_level_identity_at_init():
    heads = [OffsetHead(4) for _ in range(2)]
    dcns = [_dcn(4, 3) for _ in range(2)]
    a, b = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
    r0, r1, off = refine_level(*heads, *dcns, a, b)
    assert torch.allclose(r0, a, atol=1e-6) and torch.allclose(r1, b, atol=1e-6)
    assert torch.equal(off, torch.zeros(1, 36, 8, 8))


def test_refine_level_doubles_prior():
    heads = [OffsetHead(4) for _ in range(2)]
    dcns = [_dcn(4, 3) for _ in range(2)]
    prev = torch.zeros(1, 36, 4, 4)
    prev[:, 0::2] = 1.0  # (1, 0) on every tap of both sides
    a, b = torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8)
    _, _, off = refine_level(*heads, *dcns, a, b, prev)
    assert torch.allclose(off[:, 0::2], torch.full((1, 18, 8, 8), 2.0))
    assert torch.allclose(off[:, 1::2], torch.zeros(1, 18, 8, 8))
    # ceil-size levels are cropped after upsampling
    assert upsample_offsets(torch.ones(1, 2, 5, 5), (9, 9)).shape[-2:] == (9, 9)
    _, _, passthrough = refine_level(*heads, *dcns, a, b, prev, use_dcn=False)
    assert torch.allclose(passthrough, off)


def test_blend_examples():
    m = Blend(4)
    a = torch.randn(1, 4, 5, 5)
    assert torch.allclose(blend(m, a, a), a)
    with torch.no_grad():
        m.conv0.bias.fill_(80.0)
    b = torch.randn(1, 4, 5, 5)
    assert torch.allclose(m(a, b), a)
    with torch.no_grad():
        m.conv0.bias.fill_(float(torch.logit(torch.tensor(0.25))))
    out = m(torch.full((1, 4, 3, 3), 2.0), torch.zeros(1, 4, 3, 3))
    assert torch.allclose(out, torch.full((1, 4, 3, 3), 0.5), atol=1e-6)


def test_tied_blend_is_swap_equivariant():
    m = randomize(Blend(4, tied=True), scale=0.5)
    a, b = torch.randn(1, 4, 6, 6), torch.randn(1, 4, 6, 6)
    assert torch.allclose(m(a, b), m(b, a), atol=1e-6)


def test_interpolate_feature_tied_swap_invariance_at_half():
    torch.manual_seed(0)
    tm = randomize(TemporalModulation(8, tied=True), seed=3)
    gen = torch.Generator().manual_seed(1)
    f0, f1 = torch.randn(1, 8, 16, 16, generator=gen), torch.randn(1, 8, 16, 16, generator=gen)
    v01 = torch.randn(1, 2, 16, 16, generator=gen)
    v10 = torch.randn(1, 2, 16, 16, generator=gen)
    i0, i1 = torch.rand(1, 3, 16, 16, generator=gen), torch.rand(1, 3, 16, 16, generator=gen)
    with torch.no_grad():
        a = interpolate_feature(tm, f0, f1, v01, v10, 0.5, (i0, i1))
        b = interpolate_feature(tm, f1, f0, v10, v01, 0.5, (i1, i0))
    assert torch.allclose(a, b, atol=1e-5)


def test_interpolate_feature_static_fit():
    torch.manual_seed(0)
    tm = TemporalModulation(8)
    f = torch.randn(1, 8, 12, 12)
    z = torch.zeros(1, 2, 12, 12)
    opt = torch.optim.Adam(tm.parameters(), lr=1e-2)
    errs = []
    for _ in range(60):
        opt.zero_grad()
        loss = ((tm(f, f, z, z, 0.5) - f) ** 2).mean()
        errs.append(loss.item())
        loss.backward()
        opt.step()
    assert errs[-1] < 0.02 * errs[0]


@pytest.mark.parametrize("flags", [dict(use_fwg=False), dict(use_dcn=False), dict(use_fwg=False, use_dcn=False)])
def test_ablations_run(flags):
    tm = TemporalModulation(8, **flags)
    f0, f1 = torch.randn(1, 8, 10, 10), torch.randn(1, 8, 10, 10)
    v = torch.randn(1, 2, 10, 10)
    out = tm(f0, f1, v, -v, 0.3)
    assert out.shape == f0.shape and torch.isfinite(out).all()
    out.sum().backward()


def test_time_validation():
    tm = TemporalModulation(4)
    f, v = torch.randn(1, 4, 8, 8), torch.zeros(1, 2, 8, 8)
    for t in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            tm(f, f, v, v, t)
