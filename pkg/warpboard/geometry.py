"""Pinhole cameras, orbit poses, rays and mirroring.

Conventions used across the package:

* Camera coordinates: x right, y up, the camera looks down ``-z``.
* World up is ``+y``; mirroring reflects across the world plane ``x = 0``.
* Pixel ``(i, j)`` of a ``W x H`` image has normalized center
  ``((i + 0.5) / W, (j + 0.5) / H)``; ``v`` grows downwards.
* Intrinsics are normalized by image size, so one ``K`` serves every resolution.
* "z-depth" is the distance along the optical axis (``-z`` in camera space);
  rendered depth maps hold distance along unit rays and are converted with
  :func:`distance_to_zdepth`.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import Tensor

ORTHO_TOL = 1e-6
WORLD_UP = (0.0, 1.0, 0.0)


def _as_tensor(value, dtype=torch.float64) -> Tensor:
    if isinstance(value, Tensor):
        return value.to(dtype)
    return torch.as_tensor(np.asarray(value, dtype=np.float64), dtype=dtype)


def _check_rotation(R: Tensor, what: str) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"{what}: rotation must be 3x3, got {tuple(R.shape)}")
    Rd = R.detach().to(torch.float64)
    eye = torch.eye(3, dtype=torch.float64)
    err = float((Rd.T @ Rd - eye).abs().max())
    det = float(torch.linalg.det(Rd))
    if err > ORTHO_TOL or abs(det - 1.0) > ORTHO_TOL:
        raise ValueError(f"{what}: rotation is not orthonormal (|RtR-I|={err:.2e}, det={det:.6f})")


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float = 0.5
    cy: float = 0.5

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 < self.cx < 1.0 and 0.0 < self.cy < 1.0):
            raise ValueError(f"principal point must lie in (0, 1), got ({self.cx}, {self.cy})")

    def matrix(self, dtype=torch.float64) -> Tensor:
        return torch.tensor(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=dtype
        )

    @classmethod
    def from_matrix(cls, K) -> "Intrinsics":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        return cls(fx=float(K[0, 0]), fy=float(K[1, 1]), cx=float(K[0, 2]), cy=float(K[1, 2]))


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform."""

    R: Tensor
    t: Tensor

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", _as_tensor(self.R))
        object.__setattr__(self, "t", _as_tensor(self.t).reshape(3))
        _check_rotation(self.R, "Pose")

    @property
    def center(self) -> Tensor:
        return self.t

    def matrix(self) -> Tensor:
        M = torch.eye(4, dtype=torch.float64)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = _as_tensor(M).reshape(4, 4)
        return cls(M[:3, :3], M[:3, 3])

    def to_world(self, points: Tensor) -> Tensor:
        R = self.R.to(points.dtype)
        return points @ R.T + self.t.to(points.dtype)

    def to_camera(self, points: Tensor) -> Tensor:
        R = self.R.to(points.dtype)
        return (points - self.t.to(points.dtype)) @ R


@dataclass(frozen=True, eq=False)
class RelativePose:
    """Rigid transform from source-camera to target-camera coordinates."""

    R: Tensor
    t: Tensor

    def __post_init__(self) -> None:
        object.__setattr__(self, "R", _as_tensor(self.R))
        object.__setattr__(self, "t", _as_tensor(self.t).reshape(3))
        _check_rotation(self.R, "RelativePose")

    @classmethod
    def identity(cls) -> "RelativePose":
        return cls(torch.eye(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))

    def apply(self, points: Tensor) -> Tensor:
        return points @ self.R.to(points.dtype).T + self.t.to(points.dtype)

    def inverse(self) -> "RelativePose":
        return RelativePose(self.R.T, -(self.R.T @ self.t))

    def __matmul__(self, first: "RelativePose") -> "RelativePose":
        # (self @ first)(p) == self(first(p))
        return RelativePose(self.R @ first.R, self.R @ first.t + self.t)

    def matrix(self) -> Tensor:
        M = torch.eye(4, dtype=torch.float64)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M


class RayBundle(NamedTuple):
    origins: Tensor  # [..., H, W, 3]
    directions: Tensor  # [..., H, W, 3], unit norm


def orbit_pose(
    yaw: float,
    pitch: float,
    radius: float,
    look_at: Sequence[float] = (0.0, 0.0, 0.0),
) -> Pose:
    """Camera on a sphere around ``look_at`` with its optical axis through it.

    ``yaw`` rotates about world +y (positive yaw moves the camera towards +x),
    ``pitch`` lifts the camera towards +y.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not abs(pitch) < math.pi / 2:
        raise ValueError(f"|pitch| must be below pi/2, got {pitch}")
    target = np.asarray(look_at, dtype=np.float64).reshape(3)
    offset = np.array(
        [math.sin(yaw) * math.cos(pitch), math.sin(pitch), math.cos(yaw) * math.cos(pitch)]
    )
    center = target + radius * offset
    z_axis = offset / np.linalg.norm(offset)  # camera looks down -z
    x_axis = np.cross(np.asarray(WORLD_UP), z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    R = np.stack([x_axis, y_axis, z_axis], axis=1)
    return Pose(R, center)


def relative_pose(src: Pose, dst: Pose) -> RelativePose:
    R = dst.R.T @ src.R
    t = dst.R.T @ (src.t - dst.t)
    return RelativePose(R, t)


_MIRROR = torch.diag(torch.tensor([-1.0, 1.0, 1.0], dtype=torch.float64))


def mirror_pose(pose: Pose) -> Pose:
    """Reflect a camera across the world ``x = 0`` plane.

    The camera x axis is flipped as well so the result stays a proper rotation;
    the image seen by the mirrored camera is the column-reversed image of the
    mirrored scene.
    """
    return Pose(_MIRROR @ pose.R @ _MIRROR, _MIRROR @ pose.t)


def pixel_centers(H: int, W: int, dtype=torch.float64, device=None) -> tuple[Tensor, Tensor]:
    """Normalized ``(u, v)`` grids of shape ``[H, W]``."""
    if H < 1 or W < 1:
        raise ValueError(f"image size must be positive, got {H}x{W}")
    u = (torch.arange(W, dtype=dtype, device=device) + 0.5) / W
    v = (torch.arange(H, dtype=dtype, device=device) + 0.5) / H
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    return uu, vv


def camera_directions(K: Intrinsics, u: Tensor, v: Tensor) -> Tensor:
    """Unnormalized camera-space directions with unit z-depth (z = -1)."""
    x = (u - K.cx) / K.fx
    y = -(v - K.cy) / K.fy
    return torch.stack([x, y, -torch.ones_like(x)], dim=-1)


def rays_for_camera(K: Intrinsics, pose: Pose, H: int, W: int, dtype=torch.float64, device=None) -> RayBundle:
    u, v = pixel_centers(H, W, dtype=dtype, device=device)
    dirs_cam = camera_directions(K, u, v)
    dirs = dirs_cam @ pose.R.to(dtype=dtype, device=device).T
    dirs = dirs / dirs.norm(dim=-1, keepdim=True)
    origins = pose.t.to(dtype=dtype, device=device).expand(H, W, 3).clone()
    return RayBundle(origins, dirs)


def unproject(pixel: Tensor, depth: Tensor, K: Intrinsics, pose: Pose) -> Tensor:
    """Lift normalized pixels ``[..., 2]`` at z-depth ``[...]`` to world points."""
    depth = torch.as_tensor(depth, dtype=pixel.dtype, device=pixel.device)
    if bool((depth <= 0).any()):
        raise ValueError("unproject needs strictly positive depth")
    cam = camera_directions(K, pixel[..., 0], pixel[..., 1]) * depth.unsqueeze(-1)
    return pose.to_world(cam)


def project(points: Tensor, K: Intrinsics, pose: Pose) -> tuple[Tensor, Tensor, Tensor]:
    """Project world points ``[..., 3]``.

    Returns ``(uv, depth, in_front)``; points behind the camera keep their
    (meaningless) coordinates and are flagged with ``in_front == False``.
    """
    cam = pose.to_camera(points)
    depth = -cam[..., 2]
    in_front = depth > 0
    safe = torch.where(in_front, depth, torch.ones_like(depth))
    u = K.cx + K.fx * cam[..., 0] / safe
    v = K.cy - K.fy * cam[..., 1] / safe
    return torch.stack([u, v], dim=-1), depth, in_front


def distance_to_zdepth(distance: Tensor, K: Intrinsics) -> Tensor:
    """Convert ray-distance maps ``[..., H, W]`` to z-depth maps."""
    H, W = distance.shape[-2:]
    u, v = pixel_centers(H, W, dtype=distance.dtype, device=distance.device)
    norm = camera_directions(K, u, v).norm(dim=-1)
    return distance / norm


def zdepth_to_distance(zdepth: Tensor, K: Intrinsics) -> Tensor:
    H, W = zdepth.shape[-2:]
    u, v = pixel_centers(H, W, dtype=zdepth.dtype, device=zdepth.device)
    return zdepth * camera_directions(K, u, v).norm(dim=-1)


# --- 25-float pose records (16 extrinsic + 9 intrinsic) ---
POSE_RECORD_SIZE = 25


def pose_to_record(pose: Pose, K: Intrinsics) -> list[float]:
    values = pose.matrix().reshape(-1).tolist() + K.matrix().reshape(-1).tolist()
    return [float(x) for x in values]


def pose_from_record(values: Sequence[float]) -> tuple[Pose, Intrinsics]:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size != POSE_RECORD_SIZE:
        raise ValueError(f"pose record needs {POSE_RECORD_SIZE} floats, got {arr.size}")
    if not np.isfinite(arr).all():
        raise ValueError("pose record has non-finite values")
    M = arr[:16].reshape(4, 4)
    if not np.allclose(M[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValueError(f"last extrinsic row must be [0, 0, 0, 1], got {M[3].tolist()}")
    return Pose.from_matrix(M), Intrinsics.from_matrix(arr[16:])


__all__ = [
    "Intrinsics",
    "Pose",
    "RelativePose",
    "RayBundle",
    "orbit_pose",
    "relative_pose",
    "mirror_pose",
    "pixel_centers",
    "camera_directions",
    "rays_for_camera",
    "unproject",
    "project",
    "distance_to_zdepth",
    "zdepth_to_distance",
    "pose_to_record",
    "pose_from_record",
    "POSE_RECORD_SIZE",
]
