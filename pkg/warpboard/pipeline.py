"""The full single-image novel-view flow shared by training, editing and the app."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, NamedTuple, Sequence

import torch
from torch import Tensor

from .encoder import LatentEncoder
from .generator import SamplingConfig, TriPlaneGenerator
from .geometry import Intrinsics, Pose, distance_to_zdepth, mirror_pose, orbit_pose, relative_pose
from .svinet import SVINet
from .warping import WarpConfig, WarpResult, fill_depth, forward_warp, initial_fill, mirror_inputs

logger = logging.getLogger(__name__)

Inpainter = Callable[..., Tensor]


@dataclass
class CameraConfig:
    resolution: int = 64
    fx: float = 4.2647
    fy: float = 4.2647
    cx: float = 0.5
    cy: float = 0.5
    radius: float = 2.7
    look_at: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy)

    def pose(self, yaw: float = 0.0, pitch: float = 0.0) -> Pose:
        return orbit_pose(yaw, pitch, self.radius, self.look_at)


def as_pose_list(poses: Pose | Sequence[Pose], batch: int) -> list[Pose]:
    if isinstance(poses, Pose):
        return [poses] * batch
    poses = list(poses)
    if len(poses) != batch:
        raise ValueError(f"got {len(poses)} poses for a batch of {batch}")
    return poses


class NovelView(NamedTuple):
    w_plus: Tensor  # code driving fill and modulation
    depth: Tensor  # z-depth at the input view
    recon_novel: Tensor  # GAN render at the novel view
    depth_novel: Tensor  # z-depth rendered at the novel view
    warped: WarpResult
    initial: Tensor
    mirror_warped: WarpResult
    mirror_initial: Tensor
    inpainted: Tensor


class ReWarp(NamedTuple):
    recon: Tensor  # GAN render at the input view
    warped: WarpResult
    initial: Tensor
    mirror_initial: Tensor
    inpainted: Tensor


class WarpPipeline:
    """Encoder + generator + inpainting network behind one camera setup."""

    def __init__(
        self,
        generator: TriPlaneGenerator,
        encoder: LatentEncoder,
        svinet: SVINet,
        camera: CameraConfig | None = None,
        warp: WarpConfig | None = None,
        sampling: SamplingConfig | None = None,
    ) -> None:
        self.generator = generator
        self.encoder = encoder
        self.svinet = svinet
        self.camera = camera or CameraConfig()
        self.warp_cfg = warp or WarpConfig(far=(sampling or SamplingConfig()).far)
        self.sampling = sampling or SamplingConfig()
        self.K = self.camera.intrinsics()

    @property
    def resolution(self) -> int:
        return self.camera.resolution

    def encode(self, image: Tensor) -> Tensor:
        return self.encoder(image)

    def render(
        self,
        w_plus: Tensor,
        poses: Pose | Sequence[Pose],
        *,
        noise: Tensor | None = None,
        rng: torch.Generator | None = None,
        sampling: SamplingConfig | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Image in ``[-1, 1]`` and z-depth ``[B, 1, H, W]``."""
        image, distance = self.generator.render(
            w_plus,
            poses,
            self.K,
            self.resolution,
            noise=noise,
            sampling=sampling or self.sampling,
            rng=rng,
        )
        return image, distance_to_zdepth(distance, self.K)

    def _warp_pair(
        self,
        image: Tensor,
        depth: Tensor,
        src: list[Pose],
        dst: list[Pose],
        recon: Tensor,
        valid: Tensor | None = None,
    ) -> tuple[WarpResult, Tensor, WarpResult, Tensor]:
        rel = [relative_pose(a, b) for a, b in zip(src, dst)]
        warped = forward_warp(image, depth, rel, self.K, self.warp_cfg, valid=valid)
        initial = initial_fill(warped, recon)

        m_image, m_depth, _ = mirror_inputs(image, depth, src[0])
        m_src = [mirror_pose(p) for p in src]
        m_rel = [relative_pose(a, b) for a, b in zip(m_src, dst)]
        m_valid = None if valid is None else valid.flip(-1)
        m_warped = forward_warp(m_image, m_depth, m_rel, self.K, self.warp_cfg, valid=m_valid)
        return warped, initial, m_warped, initial_fill(m_warped, recon)

    def novel_view(
        self,
        image: Tensor,
        pose: Pose | Sequence[Pose],
        novel_pose: Pose | Sequence[Pose],
        *,
        w_plus: Tensor | None = None,
        style_code: Tensor | None = None,
        depth: Tensor | None = None,
        rng: torch.Generator | None = None,
        inpainter: Inpainter | None = None,
        use_modulation: bool | None = None,
        use_symmetry: bool | None = None,
    ) -> NovelView:
        """Forward flow: encode, render depth, warp, fill, mirror branch, inpaint.

        ``style_code`` replaces the input's code for the hole fill and the
        modulation; ``depth`` replaces the rendered input-view z-depth.
        """
        B = image.shape[0]
        src = as_pose_list(pose, B)
        dst = as_pose_list(novel_pose, B)
        if w_plus is None:
            w_plus = self.encode(image)
        style = w_plus if style_code is None else style_code
        if depth is None:
            _, depth = self.render(w_plus, src, rng=rng)
        recon_novel, depth_novel = self.render(style, dst, rng=rng)

        warped, initial, m_warped, m_initial = self._warp_pair(image, depth, src, dst, recon_novel)
        inpaint = inpainter or self.svinet.inpaint
        out = inpaint(initial, m_initial, style, use_modulation=use_modulation, use_symmetry=use_symmetry)
        logger.debug("novel view: %.1f%% of pixels inpainted", 100.0 * float(warped.mask.mean()))
        return NovelView(style, depth, recon_novel, depth_novel, warped, initial, m_warped, m_initial, out)

    def rewarp(
        self,
        view: NovelView,
        pose: Pose | Sequence[Pose],
        novel_pose: Pose | Sequence[Pose],
        *,
        rng: torch.Generator | None = None,
        inpainter: Inpainter | None = None,
        use_modulation: bool | None = None,
        use_symmetry: bool | None = None,
    ) -> ReWarp:
        """Warp the warped novel image back to the input view and inpaint it.

        Depth comes from the splat; its holes use the depth rendered at the novel view.
        Holes of the first warp are not splatted again.
        """
        B = view.initial.shape[0]
        src = as_pose_list(novel_pose, B)
        dst = as_pose_list(pose, B)
        recon, _ = self.render(view.w_plus, dst, rng=rng)
        depth = fill_depth(view.warped, view.depth_novel)
        valid = 1.0 - view.warped.mask
        warped, initial, _, m_initial = self._warp_pair(view.warped.image, depth, src, dst, recon, valid)
        inpaint = inpainter or self.svinet.inpaint
        out = inpaint(initial, m_initial, view.w_plus, use_modulation=use_modulation, use_symmetry=use_symmetry)
        return ReWarp(recon, warped, initial, m_initial, out)

    def synthesize(self, image: Tensor, pose: Pose, targets: Sequence[Pose], **kwargs) -> list[NovelView]:
        """One forward flow per target pose for a single input image ``[1, 3, H, W]``."""
        w_plus = self.encode(image)
        return [self.novel_view(image, pose, target, w_plus=w_plus, **kwargs) for target in targets]


__all__ = ["CameraConfig", "as_pose_list", "NovelView", "ReWarp", "WarpPipeline"]
