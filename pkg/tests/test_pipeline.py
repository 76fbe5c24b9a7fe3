import pytest
import torch
import torch.nn.functional as F

from warpboard.generator import SamplingConfig
from warpboard.geometry import relative_pose
from warpboard.pipeline import CameraConfig, WarpPipeline, as_pose_list
from warpboard.warping import fill_depth, forward_warp


def test_camera_config_defaults():
    cam = CameraConfig()
    assert cam.resolution == 64 and cam.radius == 2.7
    K = cam.intrinsics()
    assert (K.fx, K.fy, K.cx, K.cy) == (4.2647, 4.2647, 0.5, 0.5)
    assert float(cam.pose(0.0, 0.0).t[2]) == pytest.approx(2.7)


def test_as_pose_list():
    pose = CameraConfig().pose()
    assert len(as_pose_list(pose, 3)) == 3
    with pytest.raises(ValueError):
        as_pose_list([pose, pose], 3)


def test_render_returns_zdepth(tiny_pipeline):
    w = tiny_pipeline.generator.sample_latents(1, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        image, depth = tiny_pipeline.render(w, tiny_pipeline.camera.pose())
    assert image.shape == (1, 3, 16, 16)
    assert depth.shape == (1, 1, 16, 16)
    assert bool((depth > 0).all())
    assert float(depth.max()) <= tiny_pipeline.sampling.far + 1e-4


def test_novel_view_at_input_pose_keeps_the_image(tiny_pipeline, tiny_image):
    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(tiny_image, pose, pose)
    assert float(view.warped.mask.sum()) == 0.0
    assert torch.allclose(view.warped.image, tiny_image, atol=1e-6)
    assert torch.allclose(view.initial, tiny_image, atol=1e-6)
    assert view.inpainted.shape == tiny_image.shape


def test_novel_view_intermediates(tiny_pipeline, tiny_image):
    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    novel = tiny_pipeline.camera.pose(-0.5, 0.1)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(tiny_image, pose, novel)
        again = tiny_pipeline.novel_view(tiny_image, pose, novel)
    for t in (view.recon_novel, view.initial, view.mirror_initial, view.inpainted):
        assert t.shape == (1, 3, 16, 16)
    assert view.w_plus.shape == (1, 4, 8)
    holes = view.warped.mask.expand_as(tiny_image) > 0
    visible = ~holes
    assert torch.equal(view.initial[visible], view.warped.image[visible])
    assert torch.equal(view.initial[holes], view.recon_novel[holes])
    assert float(view.inpainted.abs().max()) <= 1.0
    assert torch.equal(view.inpainted, again.inpainted)


def test_style_code_and_depth_overrides(tiny_pipeline, tiny_image):
    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    novel = tiny_pipeline.camera.pose(0.4, 0.0)
    style = torch.zeros(1, 4, 8)
    depth = torch.full((1, 1, 16, 16), 2.7)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(tiny_image, pose, novel, style_code=style, depth=depth)
        plain = tiny_pipeline.novel_view(tiny_image, pose, novel, depth=depth)
    assert torch.equal(view.w_plus, style)
    assert torch.equal(view.depth, depth)
    assert torch.equal(view.warped.image, plain.warped.image)


def test_custom_inpainter_receives_fill(tiny_pipeline, tiny_image):
    calls = []

    def inpainter(initial, mirror_initial, w, **flags):
        calls.append(flags)
        return initial

    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(tiny_image, pose, tiny_pipeline.camera.pose(0.3, 0.0), inpainter=inpainter,
                                        use_symmetry=False)
    assert torch.equal(view.inpainted, view.initial)
    assert calls == [{"use_modulation": None, "use_symmetry": False}]


def test_rewarp_back_to_input_view(tiny_pipeline, tiny_image):
    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    novel = tiny_pipeline.camera.pose(0.4, 0.0)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(tiny_image, pose, novel)
        back = tiny_pipeline.rewarp(view, pose, novel)
    assert back.inpainted.shape == tiny_image.shape
    assert back.recon.shape == tiny_image.shape
    assert set(back.warped.mask.unique().tolist()) <= {0.0, 1.0}
    holes = back.warped.mask.expand_as(tiny_image) > 0
    assert torch.equal(back.initial[holes], back.recon[holes])


def test_synthesize_one_view_per_target(tiny_pipeline, tiny_image):
    pose = tiny_pipeline.camera.pose(0.1, 0.0)
    targets = [tiny_pipeline.camera.pose(y, 0.0) for y in (-0.3, 0.0, 0.3)]
    with torch.no_grad():
        views = tiny_pipeline.synthesize(tiny_image, pose, targets)
    assert len(views) == 3
    assert all(v.inpainted.shape == (1, 3, 16, 16) for v in views)


def test_pipeline_defaults_share_far_plane(tiny_cfg):
    pipeline = WarpPipeline(*[getattr(tiny_cfg.build_pipeline(), n) for n in ("generator", "encoder", "svinet")],
                            camera=tiny_cfg.camera, sampling=tiny_cfg.sampling)
    assert pipeline.warp_cfg.far == tiny_cfg.sampling.far
    assert pipeline.resolution == 16


def test_generator_view_warps_there_and_back(tiny_cfg):
    torch.manual_seed(0)
    base = tiny_cfg.build_pipeline()
    R = 64
    pipeline = WarpPipeline(base.generator, base.encoder, base.svinet, CameraConfig(resolution=R),
                            sampling=SamplingConfig(n_samples=64))
    w = pipeline.generator.sample_latents(1, generator=torch.Generator().manual_seed(4))
    src, dst = pipeline.camera.pose(0.0, 0.0), pipeline.camera.pose(0.2, 0.0)
    with torch.no_grad():
        image, depth = pipeline.render(w, src)
        _, depth_dst = pipeline.render(w, dst)
    cfg = pipeline.warp_cfg
    there = forward_warp(image, depth, relative_pose(src, dst), pipeline.K, cfg)
    back = forward_warp(there.image, fill_depth(there, depth_dst), relative_pose(dst, src), pipeline.K, cfg,
                        valid=1.0 - there.mask)
    # depth range over a 5x5 window; silhouettes are left out
    spread = F.max_pool2d(depth, 5, 1, 2) + F.max_pool2d(-depth, 5, 1, 2)
    keep = ((back.mask == 0) & (spread <= 0.05)).to(image.dtype)
    assert float(keep.sum()) > 0.1 * R * R
    err = ((back.image - image).abs() * keep).sum() / (3 * keep.sum())
    assert float(err) <= 2e-2


def test_symmetric_input_mirror_branch_matches_direct_warp(tiny_pipeline):
    x = torch.linspace(-1, 1, 16)
    y = torch.linspace(-1, 1, 16).view(-1, 1)
    image = torch.stack([torch.cos(2 * x).expand(16, 16), y.expand(16, 16), (x ** 2 - y).expand(16, 16)]) * 0.5
    image = 0.5 * (image + image.flip(-1))
    depth = 2.6 + 0.1 * (x ** 2 + y ** 2).view(1, 1, 16, 16)
    depth = 0.5 * (depth + depth.flip(-1))
    pose = tiny_pipeline.camera.pose(0.0, 0.0)
    with torch.no_grad():
        view = tiny_pipeline.novel_view(image.unsqueeze(0), pose, tiny_pipeline.camera.pose(0.3, 0.1), depth=depth)
    assert torch.equal(view.mirror_warped.mask, view.warped.mask)
    assert torch.allclose(view.mirror_warped.image, view.warped.image, atol=1e-5)
    assert torch.allclose(view.mirror_initial, view.initial, atol=1e-5)
