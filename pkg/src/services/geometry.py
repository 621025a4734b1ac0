"""
Geometry Service

Pinhole back-projection and rigid-transform algebra. Every function is pure:
inputs are never mutated and results are fresh values.

Transforms compose as functions: ``compose(T, T')`` applies ``T'`` first,
giving ``(R R', R t' + t)``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.exceptions import InvalidInputError, InvalidTransformError
from src.schemas.geometry import CameraIntrinsics, PointCloud, RigidTransform

logger = logging.getLogger(__name__)

# Largest rotation drift accepted (and repaired) when reading stored poses.
ORTHONORMALIZE_TOLERANCE = 1e-4


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------


def back_project(q: Sequence[float], depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    """
    Lift pixel *q* = ``(u, v)`` at *depth* meters into the camera frame.

    Returns:
        ``((u - cx) / fx * d, (v - cy) / fy * d, d)``

    Raises:
        InvalidInputError: If depth is not positive or q is not finite.
    """
    u, v = float(q[0]), float(q[1])
    if not (np.isfinite(u) and np.isfinite(v)):
        raise InvalidInputError(f"Pixel coordinate ({u}, {v}) is not finite")
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidInputError(f"Depth must be positive, got {depth}")
    return np.array(
        [
            (u - intrinsics.cx) / intrinsics.fx * depth,
            (v - intrinsics.cy) / intrinsics.fy * depth,
            float(depth),
        ]
    )


def project_point(p: Sequence[float], intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project a camera-frame point to pixel coordinates ``(u, v)``."""
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise InvalidInputError(f"Cannot project a point with z = {z} (must be in front)")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy])


def back_project_image(
    depth: np.ndarray, valid: np.ndarray, intrinsics: CameraIntrinsics
) -> PointCloud:
    """
    Back-project every valid pixel of a depth image, in row-major pixel order.

    Args:
        depth: ``(H, W)`` depth in meters.
        valid: ``(H, W)`` mask; invalid pixels are skipped.
        intrinsics: Camera of the image.

    Returns:
        Camera-frame cloud with one point per valid pixel.
    """
    rows, cols = np.nonzero(valid)
    d = depth[rows, cols].astype(np.float64)
    points = np.column_stack(
        (
            (cols - intrinsics.cx) / intrinsics.fx * d,
            (rows - intrinsics.cy) / intrinsics.fy * d,
            d,
        )
    )
    return PointCloud(points)


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------


def transform_point(p: Sequence[float], transform: RigidTransform) -> np.ndarray:
    """Apply ``R p + t``."""
    return transform.rotation @ np.asarray(p, dtype=np.float64) + transform.translation


def transform_points(points: np.ndarray, transform: RigidTransform) -> np.ndarray:
    """Apply ``R p + t`` to every row of an ``(N, 3)`` array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return points @ transform.rotation.T + transform.translation


def transform_cloud(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    """Transform every point of *cloud*; colours and order are preserved."""
    return PointCloud(transform_points(cloud.points, transform), cloud.colors)


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Return the transform applying *inner* first, then *outer*."""
    return RigidTransform(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def invert(transform: RigidTransform) -> RigidTransform:
    """Return ``(R^T, -R^T t)``."""
    rt = transform.rotation.T
    return RigidTransform(rt, -rt @ transform.translation)


def rotation_about_axis(axis: Sequence[float], angle_deg: float) -> np.ndarray:
    """Rotation matrix of *angle_deg* degrees about *axis* (right-hand rule)."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise InvalidInputError("Rotation axis must be non-zero")
    return Rotation.from_rotvec(axis / norm * np.deg2rad(angle_deg)).as_matrix()


def rotation_z(angle_deg: float) -> np.ndarray:
    """Rotation about +z with exact zeros outside the xy block."""
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle_deg(rotation: np.ndarray) -> float:
    """Rotation angle in degrees, computed with atan2 so it is exact at zero."""
    rotation = np.asarray(rotation, dtype=np.float64)
    skew = rotation - rotation.T
    sin_term = 0.5 * np.linalg.norm([skew[2, 1], skew[0, 2], skew[1, 0]])
    cos_term = 0.5 * (np.trace(rotation) - 1.0)
    return float(np.degrees(np.arctan2(sin_term, cos_term)))


def interpolate_transform(
    transform: RigidTransform, fraction: float, pivot: Sequence[float]
) -> RigidTransform:
    """
    Take *fraction* of a rigid motion.

    The result rotates by ``fraction`` of the rotation angle of *transform*
    (same axis) about *pivot* and carries *pivot* ``fraction`` of the way
    towards ``transform(pivot)``.

    Args:
        transform: Full motion.
        fraction: Share in ``(0, 1]``; 1 returns *transform* unchanged.
        pivot: Point whose path is interpolated linearly.
    """
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"Interpolation fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return transform
    pivot = np.asarray(pivot, dtype=np.float64)
    rotvec = Rotation.from_matrix(transform.rotation).as_rotvec()
    partial = Rotation.from_rotvec(rotvec * fraction).as_matrix()
    moved = pivot + fraction * (transform_point(pivot, transform) - pivot)
    return RigidTransform(partial, moved - partial @ pivot)


def orthonormalize(rotation: np.ndarray, tolerance: float = ORTHONORMALIZE_TOLERANCE) -> np.ndarray:
    """
    Snap a nearly orthonormal matrix onto the closest rotation.

    Raises:
        InvalidTransformError: If the input deviates by *tolerance* or more,
            or is a reflection.
    """
    rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    deviation = float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))
    if not deviation < tolerance:
        raise InvalidTransformError(
            f"Rotation deviates from orthonormal by {deviation:.3e} (limit {tolerance:.0e})"
        )
    u, _, vt = np.linalg.svd(rotation)
    nearest = u @ vt
    if np.linalg.det(nearest) < 0:
        raise InvalidTransformError("Matrix is a reflection, not a rotation")
    return nearest
