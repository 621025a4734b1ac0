"""
Dataset Repository

Reads and writes scan datasets. All file access to dataset directories goes
through this module; services only see Scene objects.

Layout of a dataset directory::

    intrinsics.txt       fx fy cx cy width height
    depth/000000.pgm     16-bit binary PGM, depth in millimeters, 0 = invalid
    poses.txt            id r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz
    detections.txt       keyframe_id marker_id x1 y1 x2 y2 x3 y3 x4 y4
    ground_truth.txt     optional: 3 rotation rows then the translation (meters)

Poses are camera-to-world in meters; ``#`` starts a comment line.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from src.core.exceptions import InvalidInputError, PatientAlignError
from src.schemas.geometry import CameraIntrinsics, RigidTransform
from src.schemas.scene import DepthKeyframe, MarkerObservation, Scene
from src.services.geometry import orthonormalize

logger = logging.getLogger(__name__)

INTRINSICS_FILE = "intrinsics.txt"
POSES_FILE = "poses.txt"
DETECTIONS_FILE = "detections.txt"
GROUND_TRUTH_FILE = "ground_truth.txt"
DEPTH_DIR = "depth"

PGM_MAXVAL = 65535


class DatasetFormatError(PatientAlignError):
    """Raised when a dataset file is missing or cannot be parsed.

    Attributes:
        path: Offending file.
        line: 1-based line number, when the problem is line-specific.
    """

    def __init__(self, path: Path | str, line: int | None, message: str) -> None:
        self.path = Path(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else str(self.path)
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# Shared text helpers
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _data_lines(path: Path) -> list[tuple[int, list[str]]]:
    """Non-empty, non-comment lines of *path* as ``(line_number, tokens)``."""
    if not path.is_file():
        raise DatasetFormatError(path, None, "file not found")
    rows = []
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            rows.append((number, line.split()))
    return rows


def _floats(path: Path, number: int, tokens: list[str]) -> np.ndarray:
    try:
        values = np.array([float(t) for t in tokens])
    except ValueError as e:
        raise DatasetFormatError(path, number, f"not a number ({e})") from e
    if not np.all(np.isfinite(values)):
        raise DatasetFormatError(path, number, "non-finite value")
    return values


def _int(path: Path, number: int, token: str, what: str) -> int:
    try:
        value = int(token)
    except ValueError as e:
        raise DatasetFormatError(path, number, f"{what} {token!r} is not an integer") from e
    if value < 0:
        raise DatasetFormatError(path, number, f"{what} must be non-negative, got {value}")
    return value


def _rotation(path: Path, number: int, values: np.ndarray) -> np.ndarray:
    """Rotation from 9 row-major values, repairing limited-precision drift."""
    rotation = values.reshape(3, 3)
    deviation = float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))
    if deviation < 1e-10 and abs(np.linalg.det(rotation) - 1.0) < 1e-10:
        return rotation
    try:
        repaired = orthonormalize(rotation)
    except InvalidInputError as e:
        raise DatasetFormatError(path, number, str(e)) from e
    logger.warning("%s:%d: rotation re-orthonormalized (deviation %.2e)", path, number, deviation)
    return repaired


def format_transform_row(transform: RigidTransform) -> str:
    """``r11 ... r33 tx ty tz`` at full double precision."""
    values = [*transform.rotation.ravel(), *transform.translation]
    return " ".join(_fmt(v) for v in values)


def write_rigid_transform(transform: RigidTransform, path: Path | str) -> Path:
    """Write a transform as three rotation rows followed by the translation row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [" ".join(_fmt(v) for v in row) for row in transform.rotation]
    rows.append(" ".join(_fmt(v) for v in transform.translation))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8", newline="\n")
    return path


def read_rigid_transform(path: Path | str) -> RigidTransform:
    """Inverse of write_rigid_transform; any whitespace layout of 12 numbers is accepted."""
    path = Path(path)
    rows = _data_lines(path)
    tokens = [t for _, row in rows for t in row]
    if len(tokens) != 12:
        raise DatasetFormatError(path, None, f"expected 12 values, found {len(tokens)}")
    values = _floats(path, rows[0][0], tokens)
    return RigidTransform(_rotation(path, rows[0][0], values[:9]), values[9:])


# ---------------------------------------------------------------------------
# Depth images
# ---------------------------------------------------------------------------


def depth_file_name(keyframe_id: int) -> str:
    return f"{keyframe_id:06d}.pgm"


def write_depth_pgm(depth: np.ndarray, valid: np.ndarray, path: Path | str) -> Path:
    """Write meters as 16-bit millimeters; invalid or unrepresentable pixels become 0."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    millimeters = np.zeros(depth.shape, dtype=np.int64)
    millimeters[valid] = np.floor(depth[valid] * 1000.0 + 0.5).astype(np.int64)
    millimeters[(millimeters <= 0) | (millimeters > PGM_MAXVAL)] = 0
    height, width = depth.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + millimeters.astype(">u2").tobytes())
    return path


def read_depth_pgm(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    """
    Read a 16-bit PGM depth image.

    Returns:
        ``(depth_m, valid)`` where zero pixels are invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(path, None, "depth image not found")
    data = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.find(b"\n", pos) + 1 or len(data)
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise DatasetFormatError(path, None, "truncated PGM header")
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval

    if tokens[0] != b"P5":
        raise DatasetFormatError(path, None, f"expected binary PGM 'P5', got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise DatasetFormatError(path, None, "malformed PGM header") from e
    if maxval != PGM_MAXVAL:
        raise DatasetFormatError(path, None, f"expected maxval {PGM_MAXVAL}, got {maxval}")
    payload = data[pos:]
    if len(payload) != 2 * width * height:
        raise DatasetFormatError(
            path, None, f"payload is {len(payload)} bytes, expected {2 * width * height}"
        )
    millimeters = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    valid = millimeters > 0
    return millimeters.astype(np.float64) / 1000.0, valid


# ---------------------------------------------------------------------------
# Repository
# ---------------------------------------------------------------------------


class DatasetRepository:
    """Reads and writes one dataset directory.

    Args:
        root: Dataset directory.
    """

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    # -- reading ------------------------------------------------------------

    def read_intrinsics(self) -> CameraIntrinsics:
        path = self.root / INTRINSICS_FILE
        rows = _data_lines(path)
        if len(rows) != 1 or len(rows[0][1]) != 6:
            raise DatasetFormatError(path, None, "expected one line 'fx fy cx cy width height'")
        number, tokens = rows[0]
        fx, fy, cx, cy = _floats(path, number, tokens[:4])
        width = _int(path, number, tokens[4], "width")
        height = _int(path, number, tokens[5], "height")
        try:
            return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
        except ValueError as e:
            raise DatasetFormatError(path, number, str(e)) from e

    def read_poses(self) -> dict[int, RigidTransform]:
        """keyframe_id -> camera-to-world pose, in file order."""
        path = self.root / POSES_FILE
        poses: dict[int, RigidTransform] = {}
        for number, tokens in _data_lines(path):
            if len(tokens) != 13:
                raise DatasetFormatError(path, number, f"expected 13 fields, got {len(tokens)}")
            keyframe_id = _int(path, number, tokens[0], "keyframe id")
            if keyframe_id in poses:
                raise DatasetFormatError(path, number, f"duplicate keyframe id {keyframe_id}")
            values = _floats(path, number, tokens[1:])
            poses[keyframe_id] = RigidTransform(_rotation(path, number, values[:9]), values[9:])
        return poses

    def read_detections(
        self, poses: dict[int, RigidTransform], intrinsics: CameraIntrinsics
    ) -> dict[int, list[MarkerObservation]]:
        """keyframe_id -> observations; a missing detections file means no markers."""
        path = self.root / DETECTIONS_FILE
        detections: dict[int, list[MarkerObservation]] = {k: [] for k in poses}
        if not path.exists():
            logger.warning("%s: no detections file, scene has no markers", self.root)
            return detections
        for number, tokens in _data_lines(path):
            if len(tokens) != 10:
                raise DatasetFormatError(path, number, f"expected 10 fields, got {len(tokens)}")
            keyframe_id = _int(path, number, tokens[0], "keyframe id")
            marker_id = _int(path, number, tokens[1], "marker id")
            if keyframe_id not in poses:
                raise DatasetFormatError(path, number, f"unknown keyframe id {keyframe_id}")
            corners = _floats(path, number, tokens[2:]).reshape(4, 2)
            inside = (
                (corners[:, 0] >= 0)
                & (corners[:, 0] <= intrinsics.width - 1)
                & (corners[:, 1] >= 0)
                & (corners[:, 1] <= intrinsics.height - 1)
            )
            if not inside.all():
                raise DatasetFormatError(path, number, f"marker {marker_id} corner outside image")
            detections[keyframe_id].append(MarkerObservation(marker_id, corners))
        return detections

    def read_ground_truth(self) -> RigidTransform | None:
        path = self.root / GROUND_TRUTH_FILE
        return read_rigid_transform(path) if path.exists() else None

    def read(self) -> Scene:
        """
        Parse the whole dataset.

        Raises:
            DatasetFormatError: On any missing or malformed file, naming it.
        """
        if not self.root.is_dir():
            raise DatasetFormatError(self.root, None, "dataset directory not found")
        intrinsics = self.read_intrinsics()
        poses = self.read_poses()
        detections = self.read_detections(poses, intrinsics)

        keyframes = []
        for keyframe_id, pose in poses.items():
            depth_path = self.root / DEPTH_DIR / depth_file_name(keyframe_id)
            depth, valid = read_depth_pgm(depth_path)
            if depth.shape != (intrinsics.height, intrinsics.width):
                raise DatasetFormatError(
                    depth_path,
                    None,
                    f"image is {depth.shape[1]}x{depth.shape[0]}, "
                    f"intrinsics say {intrinsics.width}x{intrinsics.height}",
                )
            keyframes.append(
                DepthKeyframe(keyframe_id, depth, valid, pose, tuple(detections[keyframe_id]))
            )

        scene = Scene(self.root.name, intrinsics, tuple(keyframes), self.read_ground_truth())
        logger.info(
            "Loaded dataset %s: %d keyframes, %d marker detections",
            self.root,
            len(scene),
            sum(len(v) for v in detections.values()),
        )
        return scene

    # -- writing ------------------------------------------------------------

    def write(self, scene: Scene) -> Path:
        """Write *scene* in the dataset layout; existing files are overwritten."""
        (self.root / DEPTH_DIR).mkdir(parents=True, exist_ok=True)
        k = scene.intrinsics
        (self.root / INTRINSICS_FILE).write_text(
            f"{_fmt(k.fx)} {_fmt(k.fy)} {_fmt(k.cx)} {_fmt(k.cy)} {k.width} {k.height}\n",
            encoding="utf-8",
            newline="\n",
        )

        pose_lines = ["# id r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz"]
        detection_lines = ["# keyframe_id marker_id x1 y1 x2 y2 x3 y3 x4 y4"]
        for frame in scene.keyframes:
            pose_lines.append(f"{frame.keyframe_id} {format_transform_row(frame.pose)}")
            for obs in frame.observations:
                coords = " ".join(_fmt(v) for v in obs.corners.ravel())
                detection_lines.append(f"{frame.keyframe_id} {obs.marker_id} {coords}")
            write_depth_pgm(
                frame.depth, frame.valid, self.root / DEPTH_DIR / depth_file_name(frame.keyframe_id)
            )

        (self.root / POSES_FILE).write_text(
            "\n".join(pose_lines) + "\n", encoding="utf-8", newline="\n"
        )
        (self.root / DETECTIONS_FILE).write_text(
            "\n".join(detection_lines) + "\n", encoding="utf-8", newline="\n"
        )
        if scene.ground_truth is not None:
            write_rigid_transform(scene.ground_truth, self.root / GROUND_TRUTH_FILE)
        logger.info("Wrote dataset %s (%d keyframes)", self.root, len(scene))
        return self.root


def read_dataset(path: Path | str) -> Scene:
    """Read the dataset directory at *path*."""
    return DatasetRepository(path).read()


def write_dataset(scene: Scene, path: Path | str) -> Path:
    """Write *scene* to the dataset directory at *path*."""
    return DatasetRepository(path).write(scene)
