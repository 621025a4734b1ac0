"""
Marker Service

Lifts detected 2D marker corners to 3D, averages them per scene and aligns a
current scene to the reference scene through the corners of the markers both
scenes share.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from src.core.exceptions import InvalidInputError, NoCommonMarkersError
from src.schemas.geometry import CameraIntrinsics, PointCloud, RigidTransform
from src.schemas.registration import CorrespondenceSet
from src.schemas.scene import DepthKeyframe, Scene, SceneMarkerCorners
from src.services.geometry import back_project, compose, transform_cloud, transform_points
from src.services.registration import find_transform

logger = logging.getLogger(__name__)


def _round_half_away(value: float) -> int:
    return int(np.sign(value) * np.floor(abs(value) + 0.5))


# ---------------------------------------------------------------------------
# Corner lifting
# ---------------------------------------------------------------------------


def corner_3d(
    corner: Sequence[float],
    frame: DepthKeyframe,
    intrinsics: CameraIntrinsics,
    window: int,
) -> np.ndarray | None:
    """
    Camera-frame 3D position of a sub-pixel marker corner.

    The corner's nearest pixel (round half away from zero) supplies the depth
    if it is valid. Otherwise the corner is replaced by the mean of the
    back-projections of all valid pixels in the ``window x window``
    neighbourhood centred on that pixel.

    Args:
        corner: Sub-pixel ``(u, v)``.
        frame: Keyframe holding depth and validity mask.
        intrinsics: Camera of the keyframe.
        window: Odd neighbourhood size s in pixels.

    Returns:
        The 3D point, or None when no pixel of the window has valid depth.
    """
    if window < 1 or window % 2 == 0:
        raise InvalidInputError(f"Corner window must be odd and >= 1, got {window}")
    u, v = float(corner[0]), float(corner[1])
    col, row = _round_half_away(u), _round_half_away(v)
    height, width = frame.shape

    if 0 <= row < height and 0 <= col < width and frame.valid[row, col]:
        return back_project((u, v), float(frame.depth[row, col]), intrinsics)

    half = window // 2
    r0, r1 = max(row - half, 0), min(row + half + 1, height)
    c0, c1 = max(col - half, 0), min(col + half + 1, width)
    if r0 >= r1 or c0 >= c1:
        return None
    rows, cols = np.nonzero(frame.valid[r0:r1, c0:c1])
    if rows.size == 0:
        return None
    rows, cols = rows + r0, cols + c0
    d = frame.depth[rows, cols]
    lifted = np.column_stack(
        (
            (cols - intrinsics.cx) / intrinsics.fx * d,
            (rows - intrinsics.cy) / intrinsics.fy * d,
            d,
        )
    )
    return lifted.mean(axis=0)


def lift_keyframe_corners(
    frame: DepthKeyframe, intrinsics: CameraIntrinsics, window: int
) -> dict[int, np.ndarray]:
    """
    Lift every observed corner of one keyframe into its camera frame.

    Returns:
        marker_id -> ``(4, 3)`` array; rows of corners that could not be
        lifted are NaN. A marker observed twice keeps its first observation.
    """
    lifted: dict[int, np.ndarray] = {}
    for observation in frame.observations:
        if observation.marker_id in lifted:
            logger.debug(
                "Keyframe %d: duplicate detection of marker %d ignored",
                frame.keyframe_id,
                observation.marker_id,
            )
            continue
        corners = np.full((4, 3), np.nan)
        for i, pixel in enumerate(observation.corners):
            point = corner_3d(pixel, frame, intrinsics, window)
            if point is not None:
                corners[i] = point
        lifted[observation.marker_id] = corners
    return lifted


def scene_corners(
    scene: Scene, refinements: Sequence[RigidTransform], window: int
) -> SceneMarkerCorners:
    """
    Average the lifted corners of every keyframe in scene coordinates.

    Each keyframe estimate is mapped through its pose, then through its Global
    ICP refinement, and averaged with the unweighted mean over the keyframes
    that produced it.

    Raises:
        InvalidInputError: If the refinement count differs from the keyframe count.
    """
    if len(refinements) != len(scene.keyframes):
        raise InvalidInputError(
            f"{len(refinements)} refinements for {len(scene.keyframes)} keyframes"
        )
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, np.ndarray] = {}

    for frame, refinement in zip(scene.keyframes, refinements, strict=True):
        to_scene = compose(refinement, frame.pose)
        for marker_id, local in lift_keyframe_corners(frame, scene.intrinsics, window).items():
            present = ~np.isnan(local).any(axis=1)
            if not present.any():
                continue
            world = transform_points(local[present], to_scene)
            total = sums.setdefault(marker_id, np.zeros((4, 3)))
            support = counts.setdefault(marker_id, np.zeros(4, dtype=np.int64))
            total[present] += world
            support[present] += 1

    corners: dict[int, np.ndarray] = {}
    for marker_id in sorted(sums):
        support = counts[marker_id]
        mean = np.full((4, 3), np.nan)
        mean[support > 0] = sums[marker_id][support > 0] / support[support > 0, None]
        if (support == 0).any():
            logger.warning(
                "Scene %r: marker %d has %d corner(s) without valid depth",
                scene.name,
                marker_id,
                int((support == 0).sum()),
            )
        corners[marker_id] = mean

    logger.info(
        "Scene %r: %d marker(s) lifted to 3D (%s)",
        scene.name,
        len(corners),
        ", ".join(str(m) for m in corners) or "none",
    )
    return SceneMarkerCorners(corners, {m: counts[m] for m in corners})


def transform_corners(corners: SceneMarkerCorners, transform: RigidTransform) -> SceneMarkerCorners:
    """Apply *transform* to every present corner; support is unchanged."""
    moved = {}
    for marker_id, positions in corners.corners.items():
        out = np.full((4, 3), np.nan)
        present = corners.present(marker_id)
        out[present] = transform_points(positions[present], transform)
        moved[marker_id] = out
    return SceneMarkerCorners(moved, {m: s.copy() for m, s in corners.support.items()})


# ---------------------------------------------------------------------------
# Scene alignment
# ---------------------------------------------------------------------------


def _common_pairs(
    current: SceneMarkerCorners, reference: SceneMarkerCorners
) -> tuple[list[int], CorrespondenceSet]:
    common = sorted(set(current.corners) & set(reference.corners))
    sources: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    used: list[int] = []
    for marker_id in common:
        both = current.present(marker_id) & reference.present(marker_id)
        if not both.any():
            continue
        used.append(marker_id)
        sources.append(current.corners[marker_id][both])
        targets.append(reference.corners[marker_id][both])
    if not used:
        return used, CorrespondenceSet(np.empty((0, 3)), np.empty((0, 3)))
    return used, CorrespondenceSet(np.concatenate(sources), np.concatenate(targets))


def align_scene(current: SceneMarkerCorners, reference: SceneMarkerCorners) -> RigidTransform:
    """
    Rigid transform taking current-scene coordinates into the reference scene.

    Every corner of every marker id present in both scenes becomes one
    correspondence.

    Raises:
        NoCommonMarkersError: If the scenes share no lifted marker.
        InsufficientCorrespondencesError, DegenerateGeometryError: From the fit.
    """
    used, pairs = _common_pairs(current, reference)
    if not used:
        raise NoCommonMarkersError(
            f"No common markers: current has {current.marker_ids}, "
            f"reference has {reference.marker_ids}"
        )
    if len(used) == 1:
        logger.warning(
            "Only marker %d is shared; alignment is weakly constrained out of plane", used[0]
        )
    transform = find_transform(pairs)
    logger.info("Aligned on %d marker(s), %d corner pairs", len(used), len(pairs))
    return transform


def corner_rms(current: SceneMarkerCorners, reference: SceneMarkerCorners) -> float:
    """RMS distance between corresponding corners of shared markers."""
    used, pairs = _common_pairs(current, reference)
    if not used:
        raise NoCommonMarkersError("No common markers to compare")
    return float(np.sqrt(np.mean(np.sum((pairs.sources - pairs.targets) ** 2, axis=1))))


def apply_alignment(clouds: Sequence[PointCloud], transform: RigidTransform) -> list[PointCloud]:
    """Move every cloud of a scene by the scene alignment."""
    return [transform_cloud(c, transform) for c in clouds]
