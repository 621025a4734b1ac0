"""
Artifact Repository

File formats of everything the pipeline emits: ASCII PLY clouds, text
heightmaps, binary PPM images and plain-text reports. Output is byte-for-byte
deterministic for identical inputs.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np

from src.core.exceptions import InvalidInputError
from src.repositories.dataset import (
    DatasetFormatError,
    format_transform_row,
    write_rigid_transform,
)
from src.schemas.compare import RgbImage
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.heightmap import HeightMap, HeightMapParams
from src.schemas.scene import SceneMarkerCorners

logger = logging.getLogger(__name__)

_HEIGHTMAP_KEYS = ("grid_step", "x_min", "x_max", "y_min", "y_max", "top_threshold", "marker_side")


def _prepare(path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_lines(path: Path | str, lines: Sequence[str]) -> Path:
    path = _prepare(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def write_ply(cloud: PointCloud, path: Path | str) -> Path:
    """Write an ASCII PLY with float x/y/z and, if present, uchar red/green/blue."""
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    rows = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in cloud.points]
    if cloud.colors is not None:
        rows = [f"{row} {r} {g} {b}" for row, (r, g, b) in zip(rows, cloud.colors, strict=True)]
    return _write_lines(path, header + rows)


def read_ply(path: Path | str) -> PointCloud:
    """Read an ASCII PLY written by write_ply (vertex element only)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, None, "PLY file not found")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DatasetFormatError(path, 1, "missing 'ply' magic")

    count = None
    properties: list[str] = []
    body_start = None
    for number, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format" and tokens[1:2] != ["ascii"]:
            raise DatasetFormatError(path, number, "only ASCII PLY is supported")
        elif tokens[0] == "element" and tokens[1] == "vertex":
            count = int(tokens[2])
        elif tokens[0] == "property":
            properties.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = number
            break
    if count is None or body_start is None:
        raise DatasetFormatError(path, None, "incomplete PLY header")
    if properties[:3] != ["x", "y", "z"]:
        raise DatasetFormatError(path, None, f"unexpected vertex properties {properties}")

    data = lines[body_start : body_start + count]
    if len(data) != count:
        raise DatasetFormatError(path, None, f"expected {count} vertices, found {len(data)}")
    if count == 0:
        return PointCloud.empty()
    table = np.array([row.split() for row in data], dtype=np.float64)
    colors = table[:, 3:6].astype(np.uint8) if "red" in properties else None
    return PointCloud(table[:, :3], colors)


# ---------------------------------------------------------------------------
# Heightmaps
# ---------------------------------------------------------------------------


def write_heightmap(heightmap: HeightMap, path: Path | str) -> Path:
    """
    Write a heightmap as text.

    A ``# key = value`` header carries the grid parameters and dimensions,
    followed by nx rows of ny cell values; undefined cells are ``nan``.
    """
    params = heightmap.params
    nx, ny = params.shape
    header = [f"{key} = {getattr(params, key)!r}" for key in _HEIGHTMAP_KEYS]
    header += [f"nx = {nx}", f"ny = {ny}"]
    path = _prepare(path)
    np.savetxt(path, heightmap.heights, fmt="%.9g", header="\n".join(header), comments="# ")
    return path


def read_heightmap(path: Path | str) -> HeightMap:
    """Inverse of write_heightmap."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, None, "heightmap file not found")
    header: dict[str, str] = {}
    with path.open(encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
    try:
        params = HeightMapParams(**{k: float(header[k]) for k in _HEIGHTMAP_KEYS})
        nx, ny = int(header["nx"]), int(header["ny"])
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(path, None, f"bad heightmap header ({e})") from e
    if (nx, ny) != params.shape:
        raise DatasetFormatError(path, None, f"header says {nx}x{ny}, grid gives {params.shape}")
    heights = np.loadtxt(path, comments="#", ndmin=2)
    if heights.shape != (nx, ny):
        raise DatasetFormatError(path, None, f"data is {heights.shape}, expected {(nx, ny)}")
    return HeightMap(params, heights)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def write_image(image: RgbImage, path: Path | str) -> Path:
    """Write a binary PPM (P6, maxval 255), rows top to bottom."""
    path = _prepare(path)
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + image.pixels.tobytes())
    return path


def read_image(path: Path | str) -> RgbImage:
    """Read a P6 PPM written by write_image."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, None, "image not found")
    data = path.read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P6":
        raise DatasetFormatError(path, None, "not a binary PPM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise DatasetFormatError(path, None, f"expected maxval 255, got {maxval}")
    payload = data[-width * height * 3 :] if width * height else b""
    if len(payload) != width * height * 3:
        raise DatasetFormatError(path, None, "truncated PPM payload")
    return RgbImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def write_transforms(transforms: Mapping[int, RigidTransform], path: Path | str) -> Path:
    """One ``id r11 ... r33 tx ty tz`` row per keyframe refinement."""
    lines = ["# id r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz"]
    lines += [f"{k} {format_transform_row(t)}" for k, t in sorted(transforms.items())]
    return _write_lines(path, lines)


def write_marker_corners(corners: SceneMarkerCorners, path: Path | str) -> Path:
    """One ``marker_id corner x y z support`` row per corner; absent corners are ``nan``."""
    lines = ["# marker_id corner x y z support"]
    for marker_id in corners.marker_ids:
        for index, (point, support) in enumerate(
            zip(corners.corners[marker_id], corners.support[marker_id], strict=True), start=1
        ):
            xyz = " ".join(f"{v:.17g}" for v in point)
            lines.append(f"{marker_id} {index} {xyz} {int(support)}")
    return _write_lines(path, lines)


def read_marker_corners(path: Path | str) -> SceneMarkerCorners:
    """Inverse of write_marker_corners."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, None, "marker corner file not found")
    corners: dict[int, np.ndarray] = {}
    support: dict[int, np.ndarray] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 6:
            raise DatasetFormatError(path, number, f"expected 6 fields, got {len(tokens)}")
        marker_id, index = int(tokens[0]), int(tokens[1])
        if not 1 <= index <= 4:
            raise DatasetFormatError(path, number, f"corner index {index} not in 1..4")
        corners.setdefault(marker_id, np.full((4, 3), np.nan))[index - 1] = [
            float(t) for t in tokens[2:5]
        ]
        support.setdefault(marker_id, np.zeros(4, dtype=np.int64))[index - 1] = int(tokens[5])
    try:
        return SceneMarkerCorners(corners, support)
    except InvalidInputError as e:
        raise DatasetFormatError(path, None, str(e)) from e


def write_key_values(values: Mapping[str, object], path: Path | str) -> Path:
    """``key = value`` lines in insertion order; floats at full precision."""
    lines = []
    for key, value in values.items():
        text = f"{value:.17g}" if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return _write_lines(path, lines)


def write_timing(stages: Sequence[tuple[str, float | None]], total: float, path: Path | str) -> Path:
    """Per-stage wall-clock seconds; stages that did not run are marked skipped."""
    width = max(len(name) for name, _ in stages)
    lines = []
    for name, seconds in stages:
        label = f"{name}:".ljust(width + 1)
        lines.append(f"{label} {'0.000 s (skipped)' if seconds is None else f'{seconds:.3f} s'}")
    lines.append(f"{'Total:'.ljust(width + 1)} {total:.3f} s")
    return _write_lines(path, lines)


class ArtifactRepository:
    """Writes pipeline outputs below one output directory.

    Args:
        root: Output directory; per-scene artifacts go to ``root/<scene>/``.
    """

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    def path(self, name: str, scene: str | None = None) -> Path:
        return self.root / scene / name if scene else self.root / name

    def save_cloud(self, cloud: PointCloud, name: str, scene: str | None = None) -> Path:
        path = write_ply(cloud, self.path(name, scene))
        logger.debug("Wrote %d points to %s", len(cloud), path)
        return path

    def save_heightmap(self, heightmap: HeightMap, name: str, scene: str | None = None) -> Path:
        return write_heightmap(heightmap, self.path(name, scene))

    def save_image(self, image: RgbImage, name: str, scene: str | None = None) -> Path:
        return write_image(image, self.path(name, scene))

    def save_transforms(
        self, transforms: Mapping[int, RigidTransform], name: str, scene: str | None = None
    ) -> Path:
        return write_transforms(transforms, self.path(name, scene))

    def save_marker_corners(
        self, corners: SceneMarkerCorners, name: str, scene: str | None = None
    ) -> Path:
        return write_marker_corners(corners, self.path(name, scene))

    def save_transform(self, transform: RigidTransform, name: str) -> Path:
        return write_rigid_transform(transform, self.path(name))

    def save_report(self, values: Mapping[str, object], name: str) -> Path:
        return write_key_values(values, self.path(name))

    def save_timing(self, stages: Sequence[tuple[str, float | None]], total: float) -> Path:
        return write_timing(stages, total, self.path("timing.txt"))
