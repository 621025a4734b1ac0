"""Tests for the pinhole camera model and rigid-transform algebra."""

from __future__ import annotations

import numpy as np
import pytest

from src.core.exceptions import InvalidInputError, InvalidTransformError
from src.schemas.geometry import CameraIntrinsics, PointCloud, RigidTransform
from src.services.geometry import (
    back_project,
    back_project_image,
    compose,
    interpolate_transform,
    invert,
    orthonormalize,
    project_point,
    rotation_about_axis,
    rotation_angle_deg,
    rotation_z,
    transform_cloud,
    transform_point,
    transform_points,
)
from tests.conftest import random_transform

K = CameraIntrinsics(fx=500.0, fy=400.0, cx=320.0, cy=240.0, width=640, height=480)


class TestRigidTransform:
    def test_identity_round_trips_through_matrix(self) -> None:
        """identity() has a 4x4 identity matrix."""
        assert np.array_equal(RigidTransform.identity().as_matrix(), np.eye(4))

    def test_non_orthonormal_rotation_rejected(self) -> None:
        """A scaled rotation raises InvalidTransformError."""
        with pytest.raises(InvalidTransformError):
            RigidTransform(2.0 * np.eye(3), np.zeros(3))

    def test_reflection_rejected(self) -> None:
        """A determinant of -1 raises InvalidTransformError."""
        with pytest.raises(InvalidTransformError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_non_finite_translation_rejected(self) -> None:
        """NaN translation raises."""
        with pytest.raises(InvalidTransformError):
            RigidTransform(np.eye(3), (0.0, np.nan, 0.0))

    def test_arrays_are_read_only(self) -> None:
        """Stored arrays cannot be mutated in place."""
        t = RigidTransform.identity()
        with pytest.raises(ValueError):
            t.translation[0] = 1.0

    def test_from_matrix_rejects_bad_last_row(self) -> None:
        """A 4x4 matrix whose last row is not [0, 0, 0, 1] is rejected."""
        m = np.eye(4)
        m[3, 0] = 1.0
        with pytest.raises(InvalidInputError):
            RigidTransform.from_matrix(m)


class TestCameraModel:
    def test_back_project_formula(self) -> None:
        """back_project returns ((u-cx)/fx d, (v-cy)/fy d, d)."""
        p = back_project((420.0, 140.0), 2.0, K)
        assert np.allclose(p, [0.4, -0.5, 2.0])

    def test_back_project_principal_point(self) -> None:
        """The principal point lifts onto the optical axis."""
        assert np.allclose(back_project((320.0, 240.0), 1.5, K), [0.0, 0.0, 1.5])

    @pytest.mark.parametrize("depth", [0.0, -1.0, float("nan")])
    def test_back_project_rejects_bad_depth(self, depth: float) -> None:
        """Non-positive or NaN depth raises InvalidInputError."""
        with pytest.raises(InvalidInputError):
            back_project((10.0, 10.0), depth, K)

    def test_project_inverts_back_project(self) -> None:
        """Projecting a back-projected pixel returns the pixel."""
        q = np.array([123.25, 401.5])
        assert np.allclose(project_point(back_project(q, 0.8, K), K), q)

    def test_back_project_image_row_major(self) -> None:
        """Valid pixels come out in row-major order; invalid ones are skipped."""
        k = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2)
        depth = np.array([[1.0, 2.0], [3.0, 4.0]])
        valid = np.array([[True, False], [True, True]])
        cloud = back_project_image(depth, valid, k)
        assert np.allclose(cloud.points, [[0, 0, 1], [0, 3, 3], [4, 4, 4]])


class TestComposition:
    def test_compose_applies_inner_first(self) -> None:
        """compose(A, B)(p) == A(B(p))."""
        rng = np.random.default_rng(1)
        a, b = random_transform(rng), random_transform(rng)
        p = rng.normal(size=3)
        expected = transform_point(transform_point(p, b), a)
        assert np.allclose(transform_point(p, compose(a, b)), expected)

    def test_compose_formula(self) -> None:
        """compose(A, B) = (R_A R_B, R_A t_B + t_A)."""
        rng = np.random.default_rng(2)
        a, b = random_transform(rng), random_transform(rng)
        c = compose(a, b)
        assert np.allclose(c.rotation, a.rotation @ b.rotation)
        assert np.allclose(c.translation, a.rotation @ b.translation + a.translation)

    def test_compose_with_inverse_is_identity(self) -> None:
        """T composed with its inverse (either order) is the identity."""
        t = random_transform(np.random.default_rng(3))
        assert compose(t, invert(t)).allclose(RigidTransform.identity(), atol=1e-12)
        assert compose(invert(t), t).allclose(RigidTransform.identity(), atol=1e-12)

    def test_compose_is_associative(self) -> None:
        """(A B) C and A (B C) agree to rounding."""
        rng = np.random.default_rng(5)
        a, b, c = (random_transform(rng) for _ in range(3))
        assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), atol=1e-12)

    def test_transform_points_matches_single_point(self) -> None:
        """Batch and single-point application agree."""
        rng = np.random.default_rng(4)
        t = random_transform(rng)
        pts = rng.normal(size=(5, 3))
        batch = transform_points(pts, t)
        assert np.allclose(batch, [transform_point(p, t) for p in pts])

    def test_transform_cloud_keeps_colours(self) -> None:
        """Colours and point order survive a transform."""
        cloud = PointCloud(np.eye(3), np.array([[1, 2, 3], [4, 5, 6], [7, 8, 9]]))
        moved = transform_cloud(cloud, RigidTransform(np.eye(3), (1.0, 0.0, 0.0)))
        assert np.array_equal(moved.colors, cloud.colors)
        assert np.allclose(moved.points[:, 0], [2.0, 1.0, 1.0])


class TestRotations:
    def test_rotation_z_exact(self) -> None:
        """rotation_z keeps exact zeros and a unit z entry."""
        r = rotation_z(37.0)
        assert r[2, 2] == 1.0 and r[0, 2] == 0.0 and r[2, 0] == 0.0

    def test_rotation_angle_exact_zero(self) -> None:
        """Identity rotation has angle exactly 0."""
        assert rotation_angle_deg(np.eye(3)) == 0.0

    @pytest.mark.parametrize("angle", [0.001, 5.0, 90.0, 179.0])
    def test_rotation_angle_recovers_axis_angle(self, angle: float) -> None:
        """The geodesic angle of an axis-angle rotation is its angle."""
        r = rotation_about_axis((1.0, 2.0, -0.5), angle)
        assert rotation_angle_deg(r) == pytest.approx(angle, abs=1e-9)

    def test_zero_axis_rejected(self) -> None:
        """A zero rotation axis raises."""
        with pytest.raises(InvalidInputError):
            rotation_about_axis((0.0, 0.0, 0.0), 10.0)

    def test_orthonormalize_repairs_small_drift(self) -> None:
        """A rotation with 1e-7 noise snaps back onto SO(3)."""
        r = rotation_z(20.0) + 1e-7
        fixed = orthonormalize(r)
        assert np.allclose(fixed.T @ fixed, np.eye(3), atol=1e-12)
        assert np.allclose(fixed, rotation_z(20.0), atol=1e-6)

    def test_orthonormalize_rejects_large_drift(self) -> None:
        """Deviation beyond the tolerance raises InvalidTransformError."""
        with pytest.raises(InvalidTransformError):
            orthonormalize(rotation_z(20.0) + 1e-2)


class TestInterpolation:
    def test_full_fraction_is_identity_operation(self) -> None:
        """Fraction 1 returns the transform unchanged."""
        t = random_transform(np.random.default_rng(5))
        assert interpolate_transform(t, 1.0, (0.0, 0.0, 0.0)) is t

    def test_half_rotation_and_pivot_path(self) -> None:
        """Half of a 40 deg turn rotates 20 deg and moves the pivot halfway."""
        t = RigidTransform(rotation_z(40.0), (0.2, -0.1, 0.3))
        pivot = np.array([1.0, 1.0, 0.0])
        half = interpolate_transform(t, 0.5, pivot)
        assert rotation_angle_deg(half.rotation) == pytest.approx(20.0)
        target = transform_point(pivot, t)
        assert np.allclose(transform_point(pivot, half), pivot + 0.5 * (target - pivot))

    def test_two_halves_do_not_overshoot(self) -> None:
        """Applying a half step twice stays close to the full motion for small steps."""
        t = RigidTransform(rotation_z(2.0), (0.01, 0.0, 0.0))
        half = interpolate_transform(t, 0.5, (0.0, 0.0, 0.0))
        assert compose(half, half).allclose(t, atol=1e-3)

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
    def test_fraction_out_of_range(self, fraction: float) -> None:
        """Fractions outside (0, 1] raise."""
        with pytest.raises(InvalidInputError):
            interpolate_transform(RigidTransform.identity(), fraction, (0.0, 0.0, 0.0))
