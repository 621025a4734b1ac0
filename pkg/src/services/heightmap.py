"""
Heightmap Service

Expresses clouds in the reference-marker frame (the marker plane is the grid
plane, +z pointing up out of it), bins points into a planar grid, keeps the
top surface of every cell and averages per cell. Per-keyframe heightmaps are
merged into one map per scene.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable

import numpy as np

from src.core.exceptions import InvalidInputError, MarkerNotFoundError, ParamsMismatchError
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.heightmap import HeightMap, HeightMapParams
from src.schemas.registration import CorrespondenceSet
from src.schemas.scene import SceneMarkerCorners
from src.services.registration import find_transform

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Reference-marker frame
# ---------------------------------------------------------------------------


def canonical_marker_corners(side: float) -> np.ndarray:
    """Corners of a marker of side *side* in its own frame, detection order."""
    half = side / 2.0
    return np.array(
        [
            [-half, -half, 0.0],
            [half, -half, 0.0],
            [half, half, 0.0],
            [-half, half, 0.0],
        ]
    )


def select_reference_marker(corners: SceneMarkerCorners, override: int | None = None) -> int:
    """
    Pick the marker whose plane becomes the grid plane.

    Args:
        corners: Reference-scene corners.
        override: Explicit marker id; must be present.

    Returns:
        *override* if given, else the lowest lifted marker id.

    Raises:
        MarkerNotFoundError: If the override is missing or no marker was lifted.
    """
    available = corners.marker_ids
    if override is not None:
        if override not in available:
            raise MarkerNotFoundError(
                f"Reference marker {override} not found in reference scene (have {available})"
            )
        return override
    if not available:
        raise MarkerNotFoundError("Reference scene has no lifted marker")
    return available[0]


def reference_marker_transform(
    reference_corners: SceneMarkerCorners, marker_id: int, side: float
) -> RigidTransform:
    """
    Transform mapping reference-scene coordinates into the marker frame.

    Raises:
        MarkerNotFoundError: If *marker_id* was not lifted in the reference scene.
    """
    if marker_id not in reference_corners.corners:
        raise MarkerNotFoundError(f"Reference marker {marker_id} not found in reference scene")
    present = reference_corners.present(marker_id)
    pairs = CorrespondenceSet(
        reference_corners.corners[marker_id][present],
        canonical_marker_corners(side)[present],
    )
    return find_transform(pairs)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def build_keyframe_heightmap(cloud: PointCloud, params: HeightMapParams) -> HeightMap:
    """
    Bin a marker-frame cloud into a top-surface heightmap.

    Points outside the crop rectangle are discarded. Every remaining point
    falls into cell ``(floor((x - x_min) / step), floor((y - y_min) / step))``,
    points on the upper edges land in the last cell. A cell's height is the
    mean z of its points lying strictly less than ``top_threshold`` below the
    cell's highest point.
    """
    nx, ny = params.shape
    points = cloud.points
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    inside = (x >= params.x_min) & (x <= params.x_max) & (y >= params.y_min) & (y <= params.y_max)
    x, y, z = x[inside], y[inside], z[inside]

    heights = np.full(nx * ny, np.nan)
    if z.size == 0:
        return HeightMap(params, heights.reshape(nx, ny))

    a = np.minimum(np.floor((x - params.x_min) / params.grid_step).astype(np.int64), nx - 1)
    b = np.minimum(np.floor((y - params.y_min) / params.grid_step).astype(np.int64), ny - 1)
    cell = a * ny + b

    top = np.full(nx * ny, -np.inf)
    np.maximum.at(top, cell, z)
    keep = (top[cell] - z) < params.top_threshold

    sums = np.bincount(cell[keep], weights=z[keep], minlength=nx * ny)
    counts = np.bincount(cell[keep], minlength=nx * ny)
    defined = counts > 0
    heights[defined] = sums[defined] / counts[defined]
    return HeightMap(params, heights.reshape(nx, ny))


class HeightMapAccumulator:
    """Running per-cell mean of heightmaps sharing one grid.

    Maps are folded in one at a time so per-keyframe maps need not be held
    together.
    """

    def __init__(self, params: HeightMapParams) -> None:
        self.params = params
        self._sums = np.zeros(params.shape)
        self._counts = np.zeros(params.shape, dtype=np.int64)
        self.merged_maps = 0

    def add(self, heightmap: HeightMap) -> None:
        """Fold one map in.

        Raises:
            ParamsMismatchError: If *heightmap* uses a different grid.
        """
        if heightmap.params != self.params:
            raise ParamsMismatchError("Cannot merge heightmaps built on different grids")
        defined = heightmap.defined
        self._sums[defined] += heightmap.heights[defined]
        self._counts[defined] += 1
        self.merged_maps += 1

    def result(self) -> HeightMap:
        heights = np.full(self.params.shape, np.nan)
        defined = self._counts > 0
        heights[defined] = self._sums[defined] / self._counts[defined]
        return HeightMap(self.params, heights)


def merge_heightmaps(maps: Iterable[HeightMap]) -> HeightMap:
    """
    Union of per-keyframe maps; shared cells take the mean of defined values.

    Raises:
        InvalidInputError: If *maps* is empty.
        ParamsMismatchError: If the maps use different grids.
    """
    accumulator: HeightMapAccumulator | None = None
    for heightmap in maps:
        if accumulator is None:
            accumulator = HeightMapAccumulator(heightmap.params)
        accumulator.add(heightmap)
    if accumulator is None:
        raise InvalidInputError("Nothing to merge")
    merged = accumulator.result()
    logger.debug(
        "Merged %d heightmaps: %d defined cells", accumulator.merged_maps, merged.defined_count
    )
    return merged


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------


def heightmap_to_cloud(heightmap: HeightMap) -> PointCloud:
    """Defined cells as points at their cell centres and heights."""
    params = heightmap.params
    a, b = np.nonzero(heightmap.defined)
    return PointCloud(
        np.column_stack(
            (
                params.x_min + (a + 0.5) * params.grid_step,
                params.y_min + (b + 0.5) * params.grid_step,
                heightmap.heights[a, b],
            )
        )
    )


def segment_heightmap(heightmap: HeightMap, floor: float) -> HeightMap:
    """Blank cells lower than *floor*, keeping the raised subject only."""
    heights = np.array(heightmap.heights)
    with np.errstate(invalid="ignore"):
        heights[heights < floor] = np.nan
    return HeightMap(heightmap.params, heights)
