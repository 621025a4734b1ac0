"""Tests for marker corner lifting, per-scene averaging and scene alignment."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from src.core.exceptions import InvalidInputError, NoCommonMarkersError
from src.schemas.geometry import CameraIntrinsics, PointCloud, RigidTransform
from src.schemas.scene import DepthKeyframe, MarkerObservation, Scene, SceneMarkerCorners
from src.services.geometry import back_project, compose, invert, rotation_z, transform_points
from src.services.heightmap import canonical_marker_corners
from src.services.markers import (
    align_scene,
    apply_alignment,
    corner_3d,
    corner_rms,
    lift_keyframe_corners,
    scene_corners,
    transform_corners,
)
from tests.conftest import random_transform

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=10.0, cy=10.0, width=21, height=21)


def _flat_frame(
    depth: float = 1.0,
    pose: RigidTransform | None = None,
    observations: tuple[MarkerObservation, ...] = (),
    keyframe_id: int = 0,
) -> DepthKeyframe:
    """21x21 keyframe seeing a plane at constant depth."""
    d = np.full((21, 21), depth)
    return DepthKeyframe(keyframe_id, d, np.ones_like(d, dtype=bool), pose or RigidTransform.identity(), observations)


def _corners(marker_ids: list[int], transform: RigidTransform | None = None) -> SceneMarkerCorners:
    """Scene corners of markers laid out on a 0.5 m grid, optionally moved."""
    transform = transform or RigidTransform.identity()
    corners = {}
    for i, marker_id in enumerate(marker_ids):
        local = canonical_marker_corners(0.1) + np.array([0.5 * i, 0.3 * (i % 2), 0.0])
        corners[marker_id] = transform_points(local, transform)
    return SceneMarkerCorners(corners, {m: np.ones(4, dtype=np.int64) for m in corners})


# ---------------------------------------------------------------------------
# corner_3d
# ---------------------------------------------------------------------------


class TestCorner3d:
    def test_valid_pixel_uses_subpixel_position(self) -> None:
        """A valid nearest pixel lifts the sub-pixel coordinate at that pixel's depth."""
        frame = _flat_frame(depth=2.0)
        point = corner_3d((12.3, 7.6), frame, K, window=3)
        assert np.allclose(point, back_project((12.3, 7.6), 2.0, K))

    def test_rounds_half_away_from_zero(self) -> None:
        """u = 4.5 reads the depth of column 5."""
        depth = np.ones((21, 21))
        depth[:, 5] = 3.0
        frame = DepthKeyframe(0, depth, np.ones_like(depth, dtype=bool), RigidTransform.identity())
        assert corner_3d((4.5, 10.0), frame, K, window=1)[2] == pytest.approx(3.0)

    def test_invalid_pixel_falls_back_to_window_mean(self) -> None:
        """With the centre pixel invalid, the mean of valid neighbours is used."""
        depth = np.ones((21, 21))
        valid = np.zeros((21, 21), dtype=bool)
        valid[10, 9] = valid[10, 11] = True
        depth[10, 9], depth[10, 11] = 1.0, 3.0
        frame = DepthKeyframe(0, depth, valid, RigidTransform.identity())
        point = corner_3d((10.0, 10.0), frame, K, window=3)
        expected = (back_project((9, 10), 1.0, K) + back_project((11, 10), 3.0, K)) / 2
        assert np.allclose(point, expected)

    def test_window_without_valid_depth(self) -> None:
        """Returns None when the whole window is invalid."""
        depth = np.ones((21, 21))
        valid = np.zeros((21, 21), dtype=bool)
        valid[0, 0] = True
        frame = DepthKeyframe(0, depth, valid, RigidTransform.identity())
        assert corner_3d((10.0, 10.0), frame, K, window=5) is None

    def test_window_clipped_at_image_border(self) -> None:
        """A window hanging over the border only looks at in-image pixels."""
        depth = np.ones((21, 21))
        valid = np.zeros((21, 21), dtype=bool)
        valid[1, 1] = True
        frame = DepthKeyframe(0, depth, valid, RigidTransform.identity())
        point = corner_3d((0.0, 0.0), frame, K, window=3)
        assert np.allclose(point, back_project((1, 1), 1.0, K))

    @pytest.mark.parametrize("window", [0, 2, -1])
    def test_window_must_be_odd_positive(self, window: int) -> None:
        """Even or non-positive windows raise InvalidInputError."""
        with pytest.raises(InvalidInputError):
            corner_3d((1.0, 1.0), _flat_frame(), K, window)


# ---------------------------------------------------------------------------
# Per-keyframe and per-scene corners
# ---------------------------------------------------------------------------


class TestSceneCorners:
    def test_lift_keyframe_corners_keeps_first_duplicate(self) -> None:
        """A marker detected twice in one keyframe keeps its first detection."""
        first = MarkerObservation(4, [[1, 1], [5, 1], [5, 5], [1, 5]])
        second = MarkerObservation(4, [[2, 2], [6, 2], [6, 6], [2, 6]])
        lifted = lift_keyframe_corners(_flat_frame(observations=(first, second)), K, 3)
        assert np.allclose(lifted[4][0], back_project((1, 1), 1.0, K))

    def test_average_over_keyframes_in_world(self) -> None:
        """Corners seen from two poses are averaged in world coordinates."""
        pixels = np.array([[5.0, 5.0], [15.0, 5.0], [15.0, 15.0], [5.0, 15.0]])
        obs = (MarkerObservation(1, pixels),)
        shift = RigidTransform(np.eye(3), (0.2, 0.0, 0.0))
        scene = Scene(
            "s",
            K,
            (
                _flat_frame(observations=obs, keyframe_id=0),
                _flat_frame(pose=shift, observations=obs, keyframe_id=1),
            ),
        )
        result = scene_corners(scene, [RigidTransform.identity()] * 2, window=3)
        local = np.array([back_project(p, 1.0, K) for p in pixels])
        assert np.allclose(result.corners[1], local + [0.1, 0.0, 0.0])
        assert result.support[1].tolist() == [2, 2, 2, 2]

    def test_refinement_applied_after_pose(self) -> None:
        """Each estimate maps through the pose, then the refinement."""
        pixels = np.array([[5.0, 5.0], [15.0, 5.0], [15.0, 15.0], [5.0, 15.0]])
        pose = RigidTransform(rotation_z(30.0), (1.0, 0.0, 0.0))
        refinement = RigidTransform(rotation_z(-5.0), (0.0, 0.1, 0.0))
        scene = Scene("s", K, (_flat_frame(pose=pose, observations=(MarkerObservation(0, pixels),)),))
        result = scene_corners(scene, [refinement], window=3)
        local = np.array([back_project(p, 1.0, K) for p in pixels])
        assert np.allclose(result.corners[0], transform_points(local, compose(refinement, pose)))

    def test_partially_supported_marker(self, caplog: pytest.LogCaptureFixture) -> None:
        """A corner with no valid depth anywhere stays NaN with zero support."""
        depth = np.ones((21, 21))
        valid = np.ones((21, 21), dtype=bool)
        valid[13:, 13:] = False  # corner (18, 18) and its window
        pixels = np.array([[2.0, 2.0], [8.0, 2.0], [18.0, 18.0], [2.0, 8.0]])
        frame = DepthKeyframe(0, depth, valid, RigidTransform.identity(), (MarkerObservation(7, pixels),))
        with caplog.at_level(logging.WARNING):
            result = scene_corners(Scene("s", K, (frame,)), [RigidTransform.identity()], window=3)
        assert result.support[7].tolist() == [1, 1, 0, 1]
        assert np.isnan(result.corners[7][2]).all()
        assert "without valid depth" in caplog.text

    def test_marker_without_any_depth_is_dropped(self) -> None:
        """A marker none of whose corners lift does not appear at all."""
        depth = np.ones((21, 21))
        valid = np.zeros((21, 21), dtype=bool)
        pixels = np.array([[5.0, 5.0], [15.0, 5.0], [15.0, 15.0], [5.0, 15.0]])
        frame = DepthKeyframe(0, depth, valid, RigidTransform.identity(), (MarkerObservation(2, pixels),))
        result = scene_corners(Scene("s", K, (frame,)), [RigidTransform.identity()], window=3)
        assert result.marker_ids == []

    def test_noisy_depth_average_within_three_sigma(self) -> None:
        """Averaging E noisy keyframes keeps corner depth within 3 sigma / sqrt(E) of the truth."""
        sigma, n_frames = 0.003, 5
        bound = 3.0 * sigma / np.sqrt(n_frames)
        pixels = np.array([[5.0, 5.0], [15.0, 5.0], [15.0, 15.0], [5.0, 15.0]])
        obs = (MarkerObservation(1, pixels),)
        errors = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            frames = tuple(
                DepthKeyframe(
                    k,
                    1.0 + rng.normal(0.0, sigma, size=(21, 21)),
                    np.ones((21, 21), dtype=bool),
                    RigidTransform.identity(),
                    obs,
                )
                for k in range(n_frames)
            )
            result = scene_corners(
                Scene("s", K, frames), [RigidTransform.identity()] * n_frames, window=3
            )
            errors.extend(np.abs(result.corners[1][:, 2] - 1.0))
        within = np.mean(np.asarray(errors) <= bound)
        assert within >= 0.98

    def test_refinement_count_must_match(self) -> None:
        """One refinement per keyframe is required."""
        scene = Scene("s", K, (_flat_frame(),))
        with pytest.raises(InvalidInputError):
            scene_corners(scene, [], window=3)

    def test_support_must_match_presence(self) -> None:
        """SceneMarkerCorners rejects a NaN corner with positive support."""
        corners = np.zeros((4, 3))
        corners[0] = np.nan
        with pytest.raises(InvalidInputError):
            SceneMarkerCorners({1: corners}, {1: np.ones(4, dtype=np.int64)})


# ---------------------------------------------------------------------------
# Scene alignment
# ---------------------------------------------------------------------------


class TestAlignScene:
    def test_recovers_rigid_motion(self) -> None:
        """Current corners moved by T^-1 align back by T."""
        truth = RigidTransform(rotation_z(7.0), (0.05, -0.02, 0.0))
        reference = _corners([0, 1, 2])
        current = transform_corners(reference, invert(truth))
        assert align_scene(current, reference).allclose(truth, atol=1e-9)

    def test_uses_only_shared_markers(self) -> None:
        """Markers present in one scene only are ignored."""
        truth = RigidTransform(rotation_z(-4.0), (0.01, 0.03, 0.0))
        reference = _corners([0, 1, 2])
        moved = _corners([0, 1, 2, 3], invert(truth))
        del moved.corners[0], moved.support[0]
        assert align_scene(moved, reference).allclose(truth, atol=1e-9)

    def test_single_shared_marker_warns(self, caplog: pytest.LogCaptureFixture) -> None:
        """One shared marker still aligns but logs a warning."""
        reference = _corners([5])
        with caplog.at_level(logging.WARNING):
            result = align_scene(reference, reference)
        assert result.allclose(RigidTransform.identity(), atol=1e-9)
        assert "weakly constrained" in caplog.text

    def test_equivariant_under_arbitrary_motion(self) -> None:
        """Moving the current corners by any G composes the alignment with inv(G)."""
        rng = np.random.default_rng(11)
        reference = _corners([0, 1, 2])
        current = transform_corners(reference, random_transform(rng, 0.2))
        base = align_scene(current, reference)
        for _ in range(5):
            g = random_transform(rng, 0.5)
            moved = align_scene(transform_corners(current, g), reference)
            assert moved.allclose(compose(base, invert(g)), atol=1e-9)

    def test_disjoint_markers_rejected(self) -> None:
        """No shared marker id raises NoCommonMarkersError."""
        with pytest.raises(NoCommonMarkersError):
            align_scene(_corners([0]), _corners([1]))

    def test_corner_rms_drops_to_zero_after_alignment(self) -> None:
        """RMS corner distance vanishes once the estimated alignment is applied."""
        truth = RigidTransform(rotation_z(10.0), (0.1, 0.0, 0.0))
        reference = _corners([0, 1])
        current = transform_corners(reference, invert(truth))
        assert corner_rms(current, reference) > 0.01
        aligned = transform_corners(current, align_scene(current, reference))
        assert corner_rms(aligned, reference) < 1e-9

    def test_apply_alignment_moves_every_cloud(self) -> None:
        """The scene alignment is applied to all clouds."""
        shift = RigidTransform(np.eye(3), (0.0, 0.0, 1.0))
        moved = apply_alignment([PointCloud(np.zeros((2, 3))), PointCloud(np.ones((1, 3)))], shift)
        assert np.allclose(moved[0].points[:, 2], 1.0)
        assert np.allclose(moved[1].points, [[1.0, 1.0, 2.0]])
