"""Tests for heightmap construction, merging and the reference-marker frame."""

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.exceptions import InvalidInputError, MarkerNotFoundError, ParamsMismatchError
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.heightmap import HeightMap, HeightMapParams
from src.schemas.scene import SceneMarkerCorners
from src.services.geometry import compose, invert, rotation_z, transform_cloud, transform_points
from src.services.heightmap import (
    HeightMapAccumulator,
    build_keyframe_heightmap,
    canonical_marker_corners,
    heightmap_to_cloud,
    merge_heightmaps,
    reference_marker_transform,
    segment_heightmap,
    select_reference_marker,
)

PARAMS = HeightMapParams(grid_step=0.1, x_min=0.0, x_max=1.0, y_min=0.0, y_max=0.5, top_threshold=0.03)


def _map(values: dict[tuple[int, int], float], params: HeightMapParams = PARAMS) -> HeightMap:
    heights = np.full(params.shape, np.nan)
    for (a, b), h in values.items():
        heights[a, b] = h
    return HeightMap(params, heights)


class TestParams:
    def test_shape_is_ceiling_of_extent(self) -> None:
        """nx = ceil((x_max - x_min) / step), robust to float noise."""
        assert PARAMS.shape == (10, 5)
        assert HeightMapParams(grid_step=0.3, x_min=0.0, x_max=1.0, y_min=0.0, y_max=0.1).shape == (4, 1)

    def test_default_grid(self) -> None:
        """Default 1.5 mm grid over [-0.1, 2.0] x [-0.2, 1.0]."""
        assert HeightMapParams().shape == (1400, 800)

    def test_bounds_must_be_ordered(self) -> None:
        """x_min >= x_max fails validation."""
        with pytest.raises(ValidationError):
            HeightMapParams(x_min=1.0, x_max=0.0)

    def test_infinite_height_rejected(self) -> None:
        """Defined cells must be finite."""
        heights = np.full(PARAMS.shape, np.nan)
        heights[0, 0] = np.inf
        with pytest.raises(InvalidInputError):
            HeightMap(PARAMS, heights)


class TestBuildKeyframeHeightmap:
    def test_top_surface_mean(self) -> None:
        """Points within the threshold of the top are averaged; deeper ones ignored."""
        cloud = PointCloud([[0.05, 0.05, 0.50], [0.06, 0.04, 0.48], [0.07, 0.05, 0.10]])
        heightmap = build_keyframe_heightmap(cloud, PARAMS)
        assert heightmap.heights[0, 0] == pytest.approx(0.49)
        assert heightmap.defined_count == 1

    def test_threshold_is_strict(self) -> None:
        """A point exactly t below the top is excluded."""
        cloud = PointCloud([[0.05, 0.05, 0.25], [0.05, 0.05, 0.125]])
        params = PARAMS.model_copy(update={"top_threshold": 0.125})
        assert build_keyframe_heightmap(cloud, params).heights[0, 0] == pytest.approx(0.25)

    def test_cell_indexing(self) -> None:
        """Cell (a, b) = (floor((x - x_min)/step), floor((y - y_min)/step))."""
        cloud = PointCloud([[0.35, 0.12, 1.0], [0.95, 0.45, 2.0]])
        heightmap = build_keyframe_heightmap(cloud, PARAMS)
        assert heightmap.heights[3, 1] == 1.0
        assert heightmap.heights[9, 4] == 2.0

    def test_points_outside_crop_discarded(self) -> None:
        """Out-of-bounds points never reach the grid."""
        cloud = PointCloud([[-0.01, 0.1, 1.0], [0.5, 0.6, 1.0], [1.2, 0.2, 1.0]])
        assert build_keyframe_heightmap(cloud, PARAMS).defined_count == 0

    def test_upper_edge_goes_to_last_cell(self) -> None:
        """x == x_max lands in cell nx - 1."""
        cloud = PointCloud([[1.0, 0.5, 0.3]])
        heightmap = build_keyframe_heightmap(cloud, PARAMS)
        assert heightmap.heights[9, 4] == pytest.approx(0.3)

    def test_empty_cloud(self) -> None:
        """An empty cloud gives a fully undefined map."""
        assert build_keyframe_heightmap(PointCloud.empty(), PARAMS).defined_count == 0

    def test_point_order_irrelevant(self) -> None:
        """Shuffling the cloud changes no cell by more than rounding."""
        rng = np.random.default_rng(3)
        points = np.column_stack(
            (rng.uniform(0.0, 1.0, 500), rng.uniform(0.0, 0.5, 500), rng.uniform(0.0, 0.1, 500))
        )
        base = build_keyframe_heightmap(PointCloud(points), PARAMS)
        shuffled = build_keyframe_heightmap(PointCloud(rng.permutation(points)), PARAMS)
        assert np.array_equal(base.defined, shuffled.defined)
        assert np.allclose(base.heights, shuffled.heights, rtol=0.0, atol=1e-12, equal_nan=True)

    def test_frame_invariance(self) -> None:
        """Moving cloud and marker by the same motion leaves the heightmap unchanged."""
        rng = np.random.default_rng(0)
        cells = rng.integers(0, [10, 5], size=(40, 2))
        points = np.column_stack(
            ((cells[:, 0] + 0.5) * 0.1, (cells[:, 1] + 0.5) * 0.1, rng.uniform(0.0, 0.2, 40))
        )
        marker = {0: canonical_marker_corners(0.1)}
        corners = SceneMarkerCorners(marker, {0: np.ones(4, dtype=np.int64)})
        base = build_keyframe_heightmap(
            transform_cloud(PointCloud(points), reference_marker_transform(corners, 0, 0.1)), PARAMS
        )

        motion = RigidTransform(rotation_z(25.0), (0.3, -0.7, 0.2))
        moved_corners = SceneMarkerCorners(
            {0: transform_points(marker[0], motion)}, {0: np.ones(4, dtype=np.int64)}
        )
        moved_cloud = transform_cloud(PointCloud(points), motion)
        to_marker = reference_marker_transform(moved_corners, 0, 0.1)
        moved = build_keyframe_heightmap(transform_cloud(moved_cloud, to_marker), PARAMS)
        assert np.array_equal(base.defined, moved.defined)
        assert np.allclose(base.heights[base.defined], moved.heights[moved.defined], atol=1e-9)


class TestMerge:
    def test_union_and_mean(self) -> None:
        """Shared cells average, others are copied."""
        merged = merge_heightmaps([_map({(0, 0): 1.0, (1, 1): 2.0}), _map({(0, 0): 3.0, (2, 2): 5.0})])
        assert merged.heights[0, 0] == 2.0
        assert merged.heights[1, 1] == 2.0
        assert merged.heights[2, 2] == 5.0
        assert merged.defined_count == 3

    def test_single_map_is_unchanged(self) -> None:
        """Merging one map returns an equal map."""
        heightmap = _map({(4, 2): 0.7})
        assert np.array_equal(merge_heightmaps([heightmap]).heights, heightmap.heights, equal_nan=True)

    def test_mismatched_grids_rejected(self) -> None:
        """Maps on different grids cannot merge."""
        other = PARAMS.model_copy(update={"top_threshold": 0.05})
        with pytest.raises(ParamsMismatchError):
            merge_heightmaps([_map({}), HeightMap.undefined(other)])

    def test_nothing_to_merge(self) -> None:
        """An empty sequence raises."""
        with pytest.raises(InvalidInputError):
            merge_heightmaps([])

    def test_accumulator_counts_maps(self) -> None:
        """The accumulator is order-independent and counts the maps folded in."""
        maps = [_map({(0, 0): v}) for v in (1.0, 2.0, 6.0)]
        forward, backward = HeightMapAccumulator(PARAMS), HeightMapAccumulator(PARAMS)
        for m in maps:
            forward.add(m)
        for m in reversed(maps):
            backward.add(m)
        assert forward.merged_maps == 3
        assert forward.result().heights[0, 0] == pytest.approx(3.0)
        assert backward.result().heights[0, 0] == pytest.approx(3.0)


class TestReferenceMarker:
    def _corners(self, transform: RigidTransform, ids: tuple[int, ...] = (3, 1, 8)) -> SceneMarkerCorners:
        corners = {
            m: transform_points(canonical_marker_corners(0.104) + [0.3 * i, 0.0, 0.0], transform)
            for i, m in enumerate(ids)
        }
        return SceneMarkerCorners(corners, {m: np.ones(4, dtype=np.int64) for m in corners})

    def test_lowest_id_by_default(self) -> None:
        """Without override the lowest marker id is chosen."""
        assert select_reference_marker(self._corners(RigidTransform.identity())) == 1

    def test_override(self) -> None:
        """An explicit id is honoured when present."""
        assert select_reference_marker(self._corners(RigidTransform.identity()), 8) == 8

    def test_missing_override(self) -> None:
        """An absent override raises MarkerNotFoundError."""
        with pytest.raises(MarkerNotFoundError):
            select_reference_marker(self._corners(RigidTransform.identity()), 42)

    def test_no_markers(self) -> None:
        """A scene without markers has no reference."""
        with pytest.raises(MarkerNotFoundError):
            select_reference_marker(SceneMarkerCorners({}, {}))

    def test_marker_frame(self) -> None:
        """The chosen marker's corners land on the canonical square."""
        placement = RigidTransform(rotation_z(40.0), (0.5, 1.0, 0.0))
        corners = self._corners(placement, ids=(2,))
        to_marker = reference_marker_transform(corners, 2, 0.104)
        assert to_marker.allclose(invert(placement), atol=1e-9)
        assert np.allclose(transform_points(corners.corners[2], to_marker), canonical_marker_corners(0.104))

    def test_marker_frame_unknown_id(self) -> None:
        """An unknown marker id raises."""
        with pytest.raises(MarkerNotFoundError):
            reference_marker_transform(self._corners(RigidTransform.identity()), 99, 0.104)

    def test_marker_frame_from_three_corners(self) -> None:
        """Three present corners suffice for the frame."""
        placement = RigidTransform(rotation_z(-15.0), (0.2, 0.1, 0.05))
        positions = transform_points(canonical_marker_corners(0.104), placement)
        positions[1] = np.nan
        support = np.array([2, 0, 1, 3])
        corners = SceneMarkerCorners({0: positions}, {0: support})
        to_marker = reference_marker_transform(corners, 0, 0.104)
        assert compose(to_marker, placement).allclose(RigidTransform.identity(), atol=1e-9)


class TestConversions:
    def test_heightmap_to_cloud_cell_centres(self) -> None:
        """Defined cells become points at their centres."""
        cloud = heightmap_to_cloud(_map({(2, 3): 0.4}))
        assert np.allclose(cloud.points, [[0.25, 0.35, 0.4]])

    def test_segment_blanks_low_cells(self) -> None:
        """Cells under the floor become undefined."""
        segmented = segment_heightmap(_map({(0, 0): 0.001, (1, 0): 0.2}), floor=0.01)
        assert segmented.defined_count == 1
        assert segmented.heights[1, 0] == 0.2
