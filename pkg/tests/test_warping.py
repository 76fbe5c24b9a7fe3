import math

import pytest
import torch

from warpboard.geometry import Intrinsics, RelativePose, mirror_pose, orbit_pose, relative_pose
from warpboard.warping import (
    WarpConfig,
    fill_depth,
    forward_warp,
    initial_fill,
    mirror_inputs,
    softmax_splat,
)

K = Intrinsics(4.2647, 4.2647)


def _smooth_image(H, W, dtype=torch.float64):
    y, x = torch.meshgrid(torch.linspace(0, 1, H, dtype=dtype), torch.linspace(0, 1, W, dtype=dtype), indexing="ij")
    return torch.stack([0.5 * torch.sin(2 * math.pi * x), 0.5 * torch.cos(2 * math.pi * y), x - y], 0).unsqueeze(0)


def test_warp_config_beta_and_validation():
    assert WarpConfig().beta == pytest.approx(10 / 4.05)
    with pytest.raises(ValueError):
        WarpConfig(hole_threshold=0.0)
    with pytest.raises(ValueError):
        WarpConfig(far=-1.0)


def test_identity_warp_is_exact():
    g = torch.Generator().manual_seed(0)
    image = torch.rand(2, 3, 12, 12, generator=g, dtype=torch.float64) * 2 - 1
    depth = 1.5 + torch.rand(2, 1, 12, 12, generator=g, dtype=torch.float64)
    out = forward_warp(image, depth, RelativePose.identity(), K)
    assert torch.equal(out.image, image)
    assert float(out.mask.sum()) == 0.0
    assert torch.allclose(out.depth, depth, atol=1e-12)


def test_identity_warp_through_orbit_pose_has_no_holes():
    pose = orbit_pose(0.3, 0.1, 2.7)
    image = _smooth_image(16, 16)
    depth = torch.full((1, 1, 16, 16), 2.7, dtype=torch.float64)
    out = forward_warp(image, depth, relative_pose(pose, pose), K)
    assert float(out.mask.sum()) == 0.0
    assert torch.allclose(out.image, image, atol=1e-6)


def test_plane_shift_moves_pixels():
    W = 16
    image = torch.rand(1, 3, W, W, dtype=torch.float64)
    depth = torch.full((1, 1, W, W), 2.0, dtype=torch.float64)
    fx = 4.0
    K4 = Intrinsics(fx, fx)
    # a translation of 2 px at z = 2 is 2 * Z / (fx * W) in camera units
    shift = 2 * 2.0 / (fx * W)
    rel = RelativePose(torch.eye(3, dtype=torch.float64), torch.tensor([shift, 0.0, 0.0], dtype=torch.float64))
    out = forward_warp(image, depth, rel, K4)
    assert torch.allclose(out.image[..., 2:], image[..., :-2], atol=1e-9)
    assert float(out.mask[..., :2].min()) == 1.0
    assert float(out.mask[..., 2:].max()) == 0.0
    assert float(out.image[..., :2].abs().max()) == 0.0


def test_nearer_surface_wins_collisions():
    values = torch.tensor([[[[1.0, -1.0]]]], dtype=torch.float64)
    px = torch.zeros(1, 1, 2, dtype=torch.float64)
    py = torch.zeros(1, 1, 2, dtype=torch.float64)
    z = torch.tensor([[[1.0, 2.0]]], dtype=torch.float64)
    out, coverage = softmax_splat(values, px, py, z, (1, 1), beta=10.0)
    expected = (1.0 - math.exp(-10.0)) / (1.0 + math.exp(-10.0))
    assert float(out) == pytest.approx(expected, abs=1e-12)
    assert float(coverage) == pytest.approx(2.0)

    flat, _ = softmax_splat(values, px, py, z, (1, 1), beta=0.0)
    assert float(flat) == pytest.approx(0.0, abs=1e-12)


def test_invalid_sources_are_not_splatted():
    values = torch.ones(1, 1, 1, 2, dtype=torch.float64)
    px = torch.zeros(1, 1, 2, dtype=torch.float64)
    py = torch.zeros(1, 1, 2, dtype=torch.float64)
    z = torch.ones(1, 1, 2, dtype=torch.float64)
    valid = torch.tensor([[[True, False]]])
    _, coverage = softmax_splat(values, px, py, z, (1, 1), beta=1.0, valid=valid)
    assert float(coverage) == pytest.approx(1.0)


def test_holes_are_zero_and_flagged():
    image = _smooth_image(16, 16)
    depth = torch.full((1, 1, 16, 16), 2.7, dtype=torch.float64)
    rel = relative_pose(orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.5, 0.0, 2.7))
    out = forward_warp(image, depth, rel, K)
    assert float(out.mask.sum()) > 0
    assert float((out.image * out.mask).abs().max()) == 0.0
    assert set(out.mask.unique().tolist()) <= {0.0, 1.0}


def test_warp_rejects_bad_depth():
    image = torch.zeros(1, 3, 8, 8)
    with pytest.raises(ValueError):
        forward_warp(image, torch.zeros(1, 1, 8, 8), RelativePose.identity(), K)
    with pytest.raises(ValueError):
        forward_warp(image, torch.ones(1, 8, 8), RelativePose.identity(), K)
    with pytest.raises(ValueError):
        forward_warp(image, torch.ones(1, 1, 8, 8), [RelativePose.identity()] * 2, K)


def test_warp_there_and_back_on_covisible_pixels():
    R = 64
    src, dst = orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.3, 0.0, 2.7)
    image = _smooth_image(R, R)
    depth = torch.full((1, 1, R, R), 2.7, dtype=torch.float64)
    there = forward_warp(image, depth, relative_pose(src, dst), K)
    novel_depth = fill_depth(there, torch.full_like(depth, 2.7))
    back = forward_warp(there.image, novel_depth, relative_pose(dst, src), K, valid=1.0 - there.mask)
    covisible = 1.0 - back.mask
    assert float(covisible.sum()) > 0.3 * R * R
    err = ((back.image - image).abs() * covisible).sum() / (3 * covisible.sum())
    assert float(err) <= 2e-2


def test_warp_is_deterministic():
    image = _smooth_image(16, 16)
    depth = torch.full((1, 1, 16, 16), 2.5, dtype=torch.float64)
    rel = relative_pose(orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.2, 0.1, 2.7))
    a = forward_warp(image, depth, rel, K)
    b = forward_warp(image, depth, rel, K)
    assert torch.equal(a.image, b.image) and torch.equal(a.mask, b.mask)


def test_forward_warp_gradcheck():
    g = torch.Generator().manual_seed(1)
    image = torch.rand(1, 2, 5, 5, generator=g, dtype=torch.float64, requires_grad=True)
    depth = (2.0 + 0.3 * torch.rand(1, 1, 5, 5, generator=g, dtype=torch.float64)).requires_grad_(True)
    rel = relative_pose(orbit_pose(0.0, 0.0, 2.7), orbit_pose(0.13, 0.07, 2.7))
    assert torch.autograd.gradcheck(lambda i, d: forward_warp(i, d, rel, K).image, (image, depth))


def test_initial_fill_and_fill_depth():
    image = _smooth_image(16, 16)
    depth = torch.full((1, 1, 16, 16), 2.7, dtype=torch.float64)
    out = forward_warp(image, depth, relative_pose(orbit_pose(0, 0, 2.7), orbit_pose(0.5, 0, 2.7)), K)
    recon = torch.full_like(image, 0.25)
    filled = initial_fill(out, recon)
    visible = out.mask == 0
    assert torch.equal(filled.expand_as(image)[visible.expand_as(image)], out.image[visible.expand_as(image)])
    assert bool((filled[(out.mask > 0).expand_as(image)] == 0.25).all())
    fd = fill_depth(out, torch.full_like(depth, 9.0))
    assert bool((fd[out.mask > 0] == 9.0).all())
    with pytest.raises(ValueError):
        initial_fill(out, torch.zeros(1, 3, 8, 8))


def test_mirror_inputs_flips_image_depth_and_pose():
    image = torch.arange(16.0).reshape(1, 1, 4, 4).expand(1, 3, 4, 4)
    depth = torch.arange(16.0).reshape(1, 1, 4, 4) + 1
    pose = orbit_pose(0.2, 0.0, 2.7)
    mi, md, mp = mirror_inputs(image, depth, pose)
    assert torch.equal(mi, image.flip(-1))
    assert torch.equal(md, depth.flip(-1))
    assert float(mp.t[0]) == pytest.approx(-float(pose.t[0]))


def test_mirrored_inputs_warp_to_the_flipped_result():
    R = 24
    src, dst = orbit_pose(0.2, 0.05, 2.7), orbit_pose(-0.15, 0.0, 2.7)
    image = _smooth_image(R, R)
    u = torch.linspace(0, 1, R, dtype=torch.float64)
    depth = (2.6 + 0.2 * u.view(1, -1) + 0.1 * u.view(-1, 1) ** 2).expand(1, 1, R, R).contiguous()
    direct = forward_warp(image, depth, relative_pose(src, dst), K)
    m_image, m_depth, m_src = mirror_inputs(image, depth, src)
    mirrored = forward_warp(m_image, m_depth, relative_pose(m_src, mirror_pose(dst)), K)
    assert torch.equal(mirrored.mask, direct.mask.flip(-1))
    assert torch.allclose(mirrored.image, direct.image.flip(-1), atol=1e-6)
    assert torch.allclose(mirrored.depth, direct.depth.flip(-1), atol=1e-6)
