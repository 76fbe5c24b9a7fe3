"""Dataset ingestion, pose files and PNG conversion.

Pose files hold one 25-float record per image (row-major 4x4 camera-to-world,
then row-major 3x3 normalized intrinsics), either as

* JSON: ``{"labels": [["img_0001.png", [25 floats]], ...], "splits": {"img_0001.png": "test"}}``
  (``splits`` optional, default ``"train"``), or
* text: one ``name f1 ... f25 [split]`` line per image; blank lines and ``#`` comments skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd
from PIL import Image
import torch
from torch import Tensor

from .geometry import POSE_RECORD_SIZE, Intrinsics, Pose, pose_from_record, pose_to_record

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
POSE_FILE_NAMES = ("dataset.json", "poses.txt")


class ManifestError(ValueError):
    """A pose row that does not parse; ``row`` is its zero-based index."""

    def __init__(self, row: int, message: str) -> None:
        super().__init__(f"row {row}: {message}")
        self.row = row


class PosedImage(NamedTuple):
    name: str
    image: Tensor  # [3, H, W] in [-1, 1]
    pose: Pose
    K: Intrinsics


@dataclass
class ManifestRecord:
    path: Path
    pose: Pose
    K: Intrinsics
    split: str = "train"


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest(self.root, [r for r in self.records if r.split == name])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            yaw_axis = r.pose.R[:, 2]
            rows.append(
                {
                    "file": r.path.name,
                    "split": r.split,
                    "cam_x": float(r.pose.t[0]),
                    "cam_y": float(r.pose.t[1]),
                    "cam_z": float(r.pose.t[2]),
                    "yaw": float(np.arctan2(float(yaw_axis[0]), float(yaw_axis[2]))),
                    "fx": r.K.fx,
                }
            )
        return pd.DataFrame(rows, columns=["file", "split", "cam_x", "cam_y", "cam_z", "yaw", "fx"])


# --- pose rows ---


def parse_pose_row(row: int, values: Sequence) -> tuple[Pose, Intrinsics]:
    try:
        floats = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ManifestError(row, f"non-numeric pose value ({exc})") from exc
    if len(floats) != POSE_RECORD_SIZE:
        raise ManifestError(row, f"expected {POSE_RECORD_SIZE} floats, got {len(floats)}")
    try:
        return pose_from_record(floats)
    except ValueError as exc:
        raise ManifestError(row, str(exc)) from exc


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_pose_rows(path: str | Path) -> list[tuple[str, list, str]]:
    """``(file name, raw values, split)`` rows of a pose file, unvalidated."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pose file not found: {path}")
    if path.suffix.lower() == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(payload, dict) or not isinstance(payload.get("labels"), list):
            raise ManifestError(0, 'JSON pose file needs a "labels" list')
        splits = payload.get("splits") or {}
        rows = []
        for i, item in enumerate(payload["labels"]):
            if not isinstance(item, (list, tuple)) or len(item) != 2 or not isinstance(item[1], list):
                raise ManifestError(i, "label must be [file, [25 floats]]")
            rows.append((str(item[0]), item[1], str(splits.get(item[0], "train"))))
        return rows

    rows = []
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        name, values = parts[0], parts[1:]
        split = "train"
        if values and not _is_number(values[-1]):
            split = values.pop()
        rows.append((name, values, split))
    return rows


def write_pose_file(path: str | Path, records: Iterable[tuple[str, Pose, Intrinsics]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    items = [(name, pose_to_record(pose, K)) for name, pose, K in records]
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps({"labels": [[n, v] for n, v in items]}, indent=2), encoding="utf-8")
    else:
        lines = [" ".join([n] + [repr(x) for x in v]) for n, v in items]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _find_pose_file(directory: Path) -> Path | None:
    for name in POSE_FILE_NAMES:
        if (directory / name).exists():
            return directory / name
    return None


def ingest(directory: str | Path, pose_file: str | Path | None = None) -> DatasetManifest:
    """Validated manifest of the images in ``directory`` and their poses."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    images = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    pose_path = Path(pose_file) if pose_file is not None else _find_pose_file(directory)
    if pose_path is None:
        if images:
            raise FileNotFoundError(f"no pose file ({' or '.join(POSE_FILE_NAMES)}) in {directory}")
        logger.warning("dataset directory %s is empty", directory)
        return DatasetManifest(directory)

    records = []
    for i, (name, values, split) in enumerate(read_pose_rows(pose_path)):
        pose, K = parse_pose_row(i, values)
        image_path = directory / name
        if not image_path.exists():
            raise FileNotFoundError(f"row {i}: image not found: {image_path}")
        records.append(ManifestRecord(image_path, pose, K, split))

    listed = {r.path.name for r in records}
    unlisted = [p.name for p in images if p.name not in listed]
    if unlisted:
        logger.warning("%d images without a pose record are skipped (e.g. %s)", len(unlisted), unlisted[0])
    if not records:
        logger.warning("dataset directory %s has no posed images", directory)
    return DatasetManifest(directory, records)


# --- images ---


def load_image(path: str | Path, resolution: int | None = None) -> Tensor:
    """8-bit image file -> ``[3, H, W]`` float tensor in ``[-1, 1]``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        img = img.convert("RGB")
        if resolution is not None and img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.Resampling.LANCZOS)
        arr = np.asarray(img, dtype=np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def to_uint8(image: Tensor) -> np.ndarray:
    """``[3, H, W]`` (or ``[1, 3, H, W]``) in ``[-1, 1]`` -> ``[H, W, 3]`` uint8, rounding half to even."""
    if image.dim() == 4:
        if image.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {image.shape[0]}")
        image = image[0]
    arr = (image.detach().cpu().double().permute(1, 2, 0).numpy() + 1.0) * 127.5
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def save_image(image: Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def load_dataset(manifest: DatasetManifest, resolution: int) -> list[PosedImage]:
    return [
        PosedImage(r.path.name, load_image(r.path, resolution), r.pose, r.K)
        for r in manifest
    ]


def make_grid(rows: Sequence[Sequence[Tensor]], pad: int = 2, fill: float = 1.0) -> Tensor:
    """Tile ``[3, H, W]`` images row by row; short rows are padded with ``fill``."""
    if not rows or not any(rows):
        raise ValueError("make_grid needs at least one image")
    first = next(img for row in rows for img in row)
    _, H, W = first.shape
    n_cols = max(len(row) for row in rows)
    grid = first.new_full((3, len(rows) * (H + pad) + pad, n_cols * (W + pad) + pad), fill)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            top, left = pad + r * (H + pad), pad + c * (W + pad)
            grid[:, top : top + H, left : left + W] = img
    return grid


__all__ = [
    "IMAGE_SUFFIXES",
    "POSE_FILE_NAMES",
    "ManifestError",
    "PosedImage",
    "ManifestRecord",
    "DatasetManifest",
    "parse_pose_row",
    "read_pose_rows",
    "write_pose_file",
    "ingest",
    "load_image",
    "to_uint8",
    "save_image",
    "load_dataset",
    "make_grid",
]
