"""
Scene Schemas

Keyframes, marker observations and per-scene marker corner estimates.
A scene is one scan session: an ordered list of depth keyframes with
camera-to-world poses and the 2D marker detections made in each of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.core.exceptions import InvalidInputError
from src.schemas.geometry import CameraIntrinsics, RigidTransform


@dataclass(frozen=True, slots=True, eq=False)
class MarkerObservation:
    """A square marker detected in one keyframe.

    Attributes:
        marker_id: Dictionary id of the marker.
        corners: ``(4, 2)`` sub-pixel ``(u, v)`` coordinates in the canonical
            corner order (bottom-left, bottom-right, top-right, top-left in the
            marker's own frame).
    """

    marker_id: int
    corners: np.ndarray

    def __post_init__(self) -> None:
        corners = np.array(self.corners, dtype=np.float64)
        if corners.shape != (4, 2):
            raise InvalidInputError(
                f"Marker {self.marker_id} must have 4 corners of (u, v), got {corners.shape}"
            )
        if not np.all(np.isfinite(corners)):
            raise InvalidInputError(f"Marker {self.marker_id} has non-finite corners")
        corners.setflags(write=False)
        object.__setattr__(self, "corners", corners)


@dataclass(frozen=True, slots=True, eq=False)
class DepthKeyframe:
    """One keyframe of a scan.

    Attributes:
        keyframe_id: Non-negative id, unique within the scene.
        depth: ``(H, W)`` depth in meters; meaningful only where *valid*.
        valid: ``(H, W)`` boolean mask of pixels with a usable depth value.
        pose: Camera-to-world pose reported by the tracker.
        observations: Markers detected in this keyframe.
    """

    keyframe_id: int
    depth: np.ndarray
    valid: np.ndarray
    pose: RigidTransform
    observations: tuple[MarkerObservation, ...] = field(default=())

    def __post_init__(self) -> None:
        depth = np.array(self.depth, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if depth.ndim != 2 or depth.shape != valid.shape:
            raise InvalidInputError(
                f"Keyframe {self.keyframe_id}: depth {depth.shape} and mask {valid.shape} "
                "must be matching 2D arrays"
            )
        valid &= np.isfinite(depth) & (depth > 0)
        depth.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "observations", tuple(self.observations))

    @property
    def shape(self) -> tuple[int, int]:
        """Image ``(height, width)``."""
        return (int(self.depth.shape[0]), int(self.depth.shape[1]))


@dataclass(frozen=True, slots=True, eq=False)
class Scene:
    """An ordered set of keyframes sharing one camera.

    Attributes:
        name: Label used for output sub-directories (e.g. ``"reference"``).
        intrinsics: Camera matrix shared by every keyframe.
        keyframes: Keyframes in acquisition order.
        ground_truth: Optional known displacement of this scene relative to
            the reference scene (synthetic datasets only).
    """

    name: str
    intrinsics: CameraIntrinsics
    keyframes: tuple[DepthKeyframe, ...]
    ground_truth: RigidTransform | None = None

    def __post_init__(self) -> None:
        keyframes = tuple(self.keyframes)
        expected = (self.intrinsics.height, self.intrinsics.width)
        for frame in keyframes:
            if frame.shape != expected:
                raise InvalidInputError(
                    f"Keyframe {frame.keyframe_id} is {frame.shape}, intrinsics say {expected}"
                )
        ids = [f.keyframe_id for f in keyframes]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"Scene {self.name!r} has duplicate keyframe ids")
        object.__setattr__(self, "keyframes", keyframes)

    def __len__(self) -> int:
        return len(self.keyframes)


@dataclass(frozen=True, slots=True, eq=False)
class SceneMarkerCorners:
    """Averaged 3D marker corners of one scene.

    Attributes:
        corners: marker_id -> ``(4, 3)`` positions in scene coordinates; a row
            is NaN when no keyframe produced a valid estimate for that corner.
        support: marker_id -> ``(4,)`` number of keyframes averaged per corner.
    """

    corners: dict[int, np.ndarray]
    support: dict[int, np.ndarray]

    def __post_init__(self) -> None:
        if set(self.corners) != set(self.support):
            raise InvalidInputError("Corner and support maps must cover the same markers")
        for marker_id, positions in self.corners.items():
            support = self.support[marker_id]
            if positions.shape != (4, 3) or support.shape != (4,):
                raise InvalidInputError(f"Marker {marker_id} has malformed corner arrays")
            present = ~np.isnan(positions).any(axis=1)
            if not np.array_equal(present, support > 0):
                raise InvalidInputError(
                    f"Marker {marker_id}: a corner is present iff at least one keyframe supports it"
                )

    @property
    def marker_ids(self) -> list[int]:
        """Sorted ids of markers with at least one present corner."""
        return sorted(self.corners)

    def present(self, marker_id: int) -> np.ndarray:
        """Boolean ``(4,)`` mask of corners with a valid estimate."""
        return self.support[marker_id] > 0
