"""
Comparison Service

Heat map and two-colour overlay of a current heightmap against the reference,
grey-scale rendering of a single map, and the rigid-transform error metrics
used to score scene alignments.

Images put grid index ``a`` (x) on the column axis and ``b`` (y) on the row
axis, row 0 at ``y_min``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
import pandas as pd

from src.core.exceptions import InvalidInputError, ParamsMismatchError
from src.schemas.compare import ErrorSummary, HeightDifferenceStats, PoseError, RgbImage
from src.schemas.geometry import RigidTransform
from src.schemas.heightmap import HeightMap
from src.services.geometry import rotation_angle_deg

logger = logging.getLogger(__name__)

# Height difference (meters) rendered as full red.
ERROR_SATURATION_M = 0.10
# Darkest intensity given to a defined cell in shaded renderings.
SHADE_FLOOR = 64


def _check_same_grid(reference: HeightMap, current: HeightMap) -> None:
    if reference.params != current.params:
        raise ParamsMismatchError("Heightmaps were built on different grids")


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5).astype(np.uint8)


def _to_image(channels: Sequence[np.ndarray]) -> RgbImage:
    # (nx, ny) grids -> (ny, nx) raster
    return RgbImage(np.stack([c.T for c in channels], axis=-1).astype(np.uint8))


def _shade(heightmap: HeightMap) -> np.ndarray:
    """Map the defined height range linearly onto [SHADE_FLOOR, 255]; 0 elsewhere."""
    defined = heightmap.defined
    shade = np.zeros(heightmap.heights.shape, dtype=np.uint8)
    if not defined.any():
        return shade
    values = heightmap.heights[defined]
    low, high = float(values.min()), float(values.max())
    if high > low:
        scaled = SHADE_FLOOR + (255 - SHADE_FLOOR) * (values - low) / (high - low)
    else:
        scaled = np.full(values.shape, 255.0)
    shade[defined] = _round_half_up(scaled)
    return shade


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def error_map(reference: HeightMap, current: HeightMap) -> RgbImage:
    """
    Heat map of absolute height differences.

    Cells defined in both maps go from blue (no error) to red (10 cm or more)
    along ``(round(255 c), 0, round(255 (1 - c)))`` with ``c = min(e / 0.10, 1)``;
    every other cell is black.

    Raises:
        ParamsMismatchError: If the maps use different grids.
    """
    _check_same_grid(reference, current)
    both = reference.defined & current.defined
    red = np.zeros(reference.heights.shape, dtype=np.uint8)
    blue = np.zeros_like(red)
    error = np.abs(reference.heights[both] - current.heights[both])
    ratio = np.minimum(error / ERROR_SATURATION_M, 1.0)
    red[both] = _round_half_up(255.0 * ratio)
    blue[both] = _round_half_up(255.0 * (1.0 - ratio))
    return _to_image((red, np.zeros_like(red), blue))


def overlay(reference: HeightMap, current: HeightMap) -> RgbImage:
    """
    Reference in blue, current in red, each shaded by its own height range.

    Raises:
        ParamsMismatchError: If the maps use different grids.
    """
    _check_same_grid(reference, current)
    red = _shade(current)
    return _to_image((red, np.zeros_like(red), _shade(reference)))


def render_heightmap(heightmap: HeightMap, floor: float | None = None) -> RgbImage:
    """Grey-scale shading of one heightmap, optionally ignoring cells below *floor*."""
    if floor is not None:
        heights = np.array(heightmap.heights)
        with np.errstate(invalid="ignore"):
            heights[heights < floor] = np.nan
        heightmap = HeightMap(heightmap.params, heights)
    grey = _shade(heightmap)
    return _to_image((grey, grey, grey))


def height_difference_stats(reference: HeightMap, current: HeightMap) -> HeightDifferenceStats:
    """Absolute height differences over doubly defined cells."""
    _check_same_grid(reference, current)
    both = reference.defined & current.defined
    if not both.any():
        return HeightDifferenceStats(overlap_cells=0)
    diff = np.abs(reference.heights[both] - current.heights[both])
    return HeightDifferenceStats(
        overlap_cells=int(both.sum()),
        mean_abs_m=float(diff.mean()),
        max_abs_m=float(diff.max()),
    )


# ---------------------------------------------------------------------------
# Transform errors
# ---------------------------------------------------------------------------


def pose_error(estimated: RigidTransform, ground_truth: RigidTransform) -> PoseError:
    """
    Geodesic rotation angle and translation distance between two transforms.

    Returns:
        PoseError with the angle of ``R_est R_gt^T`` in degrees and
        ``1000 * |t_est - t_gt|`` in millimeters.
    """
    angle = rotation_angle_deg(estimated.rotation @ ground_truth.rotation.T)
    distance = float(np.linalg.norm(estimated.translation - ground_truth.translation))
    return PoseError(rotation_deg=min(max(angle, 0.0), 180.0), translation_mm=1000.0 * distance)


def error_statistics(errors: Sequence[PoseError]) -> ErrorSummary:
    """
    Mean and median of each error component.

    Raises:
        InvalidInputError: If *errors* is empty.
    """
    if not errors:
        raise InvalidInputError("Cannot summarise an empty list of errors")
    frame = pd.DataFrame([e.model_dump() for e in errors])
    return ErrorSummary(
        count=len(frame),
        mean_rotation_deg=float(frame["rotation_deg"].mean()),
        median_rotation_deg=float(frame["rotation_deg"].median()),
        mean_translation_mm=float(frame["translation_mm"].mean()),
        median_translation_mm=float(frame["translation_mm"].median()),
    )
