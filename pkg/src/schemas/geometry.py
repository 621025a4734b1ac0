"""
Geometry Schemas

Foundational 3D carriers: rigid transforms, pinhole intrinsics and point
clouds. Numeric payloads are numpy arrays frozen at construction so the
dataclasses behave as immutable values; parameter-only types are pydantic
models so range checks run on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.exceptions import InvalidInputError, InvalidTransformError

# Orthonormality / determinant tolerance for every RigidTransform.
ROTATION_TOLERANCE = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, slots=True, eq=False)
class RigidTransform:
    """Rotation plus translation acting as ``p -> R p + t`` (meters).

    Attributes:
        rotation: 3x3 orthonormal matrix with determinant +1.
        translation: 3-vector in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidTransformError("Rigid transform contains non-finite values")
        deviation = np.linalg.norm(rotation.T @ rotation - np.eye(3))
        if deviation >= ROTATION_TOLERANCE:
            raise InvalidTransformError(
                f"Rotation is not orthonormal (|R^T R - I|_F = {deviation:.3e})"
            )
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ROTATION_TOLERANCE:
            raise InvalidTransformError(f"Rotation determinant is {det:.12f}, expected +1")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> RigidTransform:
        """Return the identity transform."""
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> RigidTransform:
        """Build a transform from a 4x4 homogeneous matrix.

        Raises:
            InvalidInputError: If *matrix* is not 4x4 with a ``[0, 0, 0, 1]`` last row.
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise InvalidInputError(f"Homogeneous matrix must be 4x4, got {matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidInputError("Homogeneous matrix last row must be [0, 0, 0, 1]")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        """Return the 4x4 homogeneous matrix of this transform."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        """Element-wise comparison of rotation and translation within *atol*."""
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return (
            f"RigidTransform(rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()})"
        )


class CameraIntrinsics(BaseModel):
    """Pinhole camera parameters (pixels); no lens distortion.

    Attributes:
        fx: Horizontal focal length.
        fy: Vertical focal length.
        cx: Principal point column.
        cy: Principal point row.
        width: Image width.
        height: Image height.
    """

    model_config = ConfigDict(frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float = Field(ge=0)
    cy: float = Field(ge=0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> CameraIntrinsics:
        if not (self.cx < self.width and self.cy < self.height):
            raise ValueError(
                f"Principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )
        return self


@dataclass(frozen=True, slots=True, eq=False)
class PointCloud:
    """Unordered 3D points in meters, optionally coloured.

    Attributes:
        points: ``(N, 3)`` float64 array.
        colors: Optional ``(N, 3)`` uint8 array of RGB triplets.
    """

    points: np.ndarray
    colors: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("Point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(points))
        if self.colors is not None:
            colors = np.array(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(points):
                raise InvalidInputError(
                    f"Colour count {len(colors)} does not match point count {len(points)}"
                )
            object.__setattr__(self, "colors", _frozen(colors))

    @classmethod
    def empty(cls) -> PointCloud:
        """Return a cloud with no points."""
        return cls(np.empty((0, 3)))

    @classmethod
    def concatenate(cls, clouds: list[PointCloud]) -> PointCloud:
        """Stack several clouds; colours survive only if every cloud carries them."""
        if not clouds:
            return cls.empty()
        points = np.concatenate([c.points for c in clouds], axis=0)
        if all(c.colors is not None for c in clouds):
            colors = np.concatenate([c.colors for c in clouds], axis=0)  # type: ignore[misc]
            return cls(points, colors)
        return cls(points)

    def __len__(self) -> int:
        return int(self.points.shape[0])
