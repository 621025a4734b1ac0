"""
Synthetic Scene Schemas

Parameters of the synthetic scan generator: the body heightfield, the floor
markers, the camera path and the sensor noise model, plus the ground truth
emitted alongside every rendered scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.exceptions import InvalidInputError
from src.schemas.geometry import CameraIntrinsics, RigidTransform
from src.schemas.scene import Scene


class BodyModel(BaseModel):
    """Superelliptic torso lying on the floor, expressed in its own frame.

    The surface is the heightfield
    ``h(x, y) = H * taper(x) * profile(y) * (1 + b * exp(-|(x, y) - c|^2 / (2 w^2)))``
    over ``|x| <= L/2, |y| <= W/2`` and zero elsewhere. The off-centre bulge
    makes in-plane yaw observable from the surface alone.

    Attributes:
        length: Extent L along x (meters).
        width: Extent W along y (meters).
        height: Peak height H of the torso without bulge (meters).
        length_exponent: Superellipse exponent of the taper along x.
        width_exponent: Superellipse exponent of the cross-section along y.
        bulge_amplitude: Relative bulge height b; 0 disables the bulge.
        bulge_center: Bulge centre c in the body frame (meters).
        bulge_width: Gaussian width w of the bulge (meters).
    """

    model_config = ConfigDict(frozen=True)

    length: float = Field(default=0.9, gt=0)
    width: float = Field(default=0.4, gt=0)
    height: float = Field(default=0.2, gt=0)
    length_exponent: float = Field(default=6.0, ge=1)
    width_exponent: float = Field(default=2.5, ge=1)
    bulge_amplitude: float = Field(default=0.25, ge=0)
    bulge_center: tuple[float, float] = (0.22, 0.06)
    bulge_width: float = Field(default=0.07, gt=0)

    @property
    def max_height(self) -> float:
        """Upper bound of the heightfield, used to bracket ray intersections."""
        return self.height * (1.0 + self.bulge_amplitude)


class MarkerPlacement(BaseModel):
    """A square marker lying flat on the floor.

    Attributes:
        marker_id: Dictionary id.
        center: Floor position ``(x, y)`` in meters.
        yaw_deg: In-plane rotation about the floor normal.
        side: Side length l in meters.
    """

    model_config = ConfigDict(frozen=True)

    marker_id: int = Field(ge=0)
    center: tuple[float, float]
    yaw_deg: float = 0.0
    side: float = Field(default=0.104, gt=0)


class NoiseModel(BaseModel):
    """Sensor and tracker imperfections applied by the generator.

    Attributes:
        depth_sigma_m: Gaussian depth noise on valid pixels.
        dropout: Probability of invalidating each pixel.
        rotation_sigma_deg: Angle spread of the recorded pose perturbation.
        translation_sigma_m: Per-axis spread of the recorded pose perturbation.
        corner_sigma_px: Gaussian noise on detected corner coordinates.
    """

    model_config = ConfigDict(frozen=True)

    depth_sigma_m: float = Field(default=0.0, ge=0)
    dropout: float = Field(default=0.0, ge=0, le=1)
    rotation_sigma_deg: float = Field(default=0.0, ge=0)
    translation_sigma_m: float = Field(default=0.0, ge=0)
    corner_sigma_px: float = Field(default=0.0, ge=0)

    @classmethod
    def realistic(cls) -> NoiseModel:
        """Noisy regime of the positioning evaluation (3 mm, 0.5 px, 1 deg / 1 cm)."""
        return cls(
            depth_sigma_m=0.003,
            dropout=0.01,
            rotation_sigma_deg=1.0,
            translation_sigma_m=0.01,
            corner_sigma_px=0.5,
        )

    @property
    def is_noiseless(self) -> bool:
        return not any(
            (
                self.depth_sigma_m,
                self.dropout,
                self.rotation_sigma_deg,
                self.translation_sigma_m,
                self.corner_sigma_px,
            )
        )


@dataclass(frozen=True, slots=True, eq=False)
class SyntheticSceneSpec:
    """Everything needed to render one synthetic scan.

    Attributes:
        intrinsics: Camera shared by every keyframe.
        camera_path: Camera-to-floor poses, one per keyframe.
        markers: Floor markers; ids must be unique.
        body: Body heightfield parameters.
        body_pose: Body-to-floor placement.
        noise: Sensor and tracker noise.
        seed: Base seed of every random stream.
    """

    intrinsics: CameraIntrinsics
    camera_path: tuple[RigidTransform, ...]
    markers: tuple[MarkerPlacement, ...]
    body: BodyModel = field(default_factory=BodyModel)
    body_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "camera_path", tuple(self.camera_path))
        object.__setattr__(self, "markers", tuple(self.markers))
        if not self.camera_path:
            raise InvalidInputError("A synthetic scene needs at least one camera pose")
        ids = [m.marker_id for m in self.markers]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("Marker ids must be unique")


@dataclass(frozen=True, slots=True, eq=False)
class GroundTruth:
    """Exact quantities behind a rendered scene.

    Attributes:
        displacement: Body displacement D relative to the reference placement;
            also the transform mapping this scene's frame onto the reference
            scene's frame.
        marker_corners: marker_id -> ``(4, 3)`` exact corners in scene coordinates.
        camera_poses: Exact camera-to-scene poses before any perturbation.
    """

    displacement: RigidTransform
    marker_corners: dict[int, np.ndarray]
    camera_poses: tuple[RigidTransform, ...]


@dataclass(frozen=True, slots=True, eq=False)
class SyntheticScene:
    """A rendered scan together with its ground truth."""

    scene: Scene
    truth: GroundTruth
