"""
Synthetic Scan Generator

Stands in for the handheld RGB-D sensor, the SLAM tracker and the motion
capture ground truth: renders depth keyframes of a parametric body lying on a
marker-bearing floor from known camera poses, detects the markers by exact
projection, applies configurable sensor/tracker noise and writes datasets the
pipeline reads.

Frames:
- floor frame: z = 0 is the floor, +z up. Markers are fixed in it.
- scene frame: the frame a scan's poses are recorded in. It follows the body,
  so a body displaced by D on the floor keeps its reference coordinates while
  the markers appear moved by D^-1. Aligning that scene onto the reference
  scene therefore yields exactly D.

Every keyframe draws its noise from an independent stream seeded with
``(seed, keyframe_index)``, so output does not depend on rendering order.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from src.core.exceptions import InvalidInputError
from src.repositories.dataset import write_dataset
from src.schemas.geometry import CameraIntrinsics, RigidTransform
from src.schemas.scene import DepthKeyframe, MarkerObservation, Scene
from src.schemas.synthetic import (
    BodyModel,
    GroundTruth,
    MarkerPlacement,
    NoiseModel,
    SyntheticScene,
    SyntheticSceneSpec,
)
from src.services.geometry import (
    compose,
    invert,
    rotation_about_axis,
    rotation_z,
    transform_points,
)
from src.services.heightmap import canonical_marker_corners

logger = logging.getLogger(__name__)

# Camera looking straight down: x right, y towards -y_floor, z down.
NADIR_ROTATION = np.diag([1.0, -1.0, -1.0])

# Ray marching samples between the body's top and the floor, then bisection.
MARCH_STEPS = 24
BISECTION_STEPS = 50

# Depth slack (meters) when testing whether a marker corner is occluded.
OCCLUSION_SLACK = 1e-4

DEFAULT_KEYFRAMES = 15
_PATH_X = (-0.5, -0.25, 0.0, 0.25, 0.5)
_PATH_Y = (-0.15, 0.0, 0.15)
_PATH_HEIGHTS = (1.0, 1.1, 1.2)
_PATH_YAWS = (-10.0, -5.0, 0.0, 5.0, 10.0)


# ---------------------------------------------------------------------------
# Defaults
# ---------------------------------------------------------------------------


def default_intrinsics(width: int = 320, height: int = 240) -> CameraIntrinsics:
    """Pinhole camera with a 300 px focal length at 320 px width, scaled to *width*."""
    focal = 300.0 * width / 320.0
    return CameraIntrinsics(
        fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0, width=width, height=height
    )


def nadir_pose(x: float, y: float, height: float, yaw_deg: float = 0.0) -> RigidTransform:
    """Camera-to-floor pose of a camera at ``(x, y, height)`` looking straight down."""
    return RigidTransform(rotation_z(yaw_deg) @ NADIR_ROTATION, (x, y, height))


def default_camera_path(count: int = DEFAULT_KEYFRAMES) -> list[RigidTransform]:
    """
    Nadir sweep over the body on a 5 x 3 grid.

    Heights are 1.0, 1.1 and 1.2 m per grid row and yaw varies along each
    row. Fewer than 15 poses are picked evenly from the grid.
    """
    grid = [
        nadir_pose(x, y, _PATH_HEIGHTS[iy], _PATH_YAWS[ix])
        for iy, y in enumerate(_PATH_Y)
        for ix, x in enumerate(_PATH_X)
    ]
    if not 1 <= count <= len(grid):
        raise InvalidInputError(f"Camera path supports 1 to {len(grid)} poses, got {count}")
    picks = np.round(np.linspace(0, len(grid) - 1, count)).astype(int)
    return [grid[i] for i in picks]


def default_markers(side: float = 0.104) -> list[MarkerPlacement]:
    """Four markers around the body, ids 0-3."""
    return [
        MarkerPlacement(marker_id=0, center=(-0.65, -0.35), yaw_deg=0.0, side=side),
        MarkerPlacement(marker_id=1, center=(0.65, -0.35), yaw_deg=15.0, side=side),
        MarkerPlacement(marker_id=2, center=(0.65, 0.35), yaw_deg=-10.0, side=side),
        MarkerPlacement(marker_id=3, center=(-0.65, 0.35), yaw_deg=30.0, side=side),
    ]


def default_scene_spec(
    noise: NoiseModel | None = None,
    seed: int = 0,
    keyframes: int = DEFAULT_KEYFRAMES,
    intrinsics: CameraIntrinsics | None = None,
    body: BodyModel | None = None,
) -> SyntheticSceneSpec:
    """Body at the floor origin, default markers and camera sweep."""
    return SyntheticSceneSpec(
        intrinsics=intrinsics or default_intrinsics(),
        camera_path=tuple(default_camera_path(keyframes)),
        markers=tuple(default_markers()),
        body=body or BodyModel(),
        noise=noise or NoiseModel(),
        seed=seed,
    )


def position_displacements(
    count: int = 9,
    seed: int = 0,
    max_translation_m: float = 0.08,
    max_yaw_deg: float = 10.0,
) -> list[RigidTransform]:
    """Random in-plane body placements (yaw about +z, translation in x/y)."""
    rng = np.random.default_rng(seed)
    result = []
    for _ in range(count):
        yaw = rng.uniform(-max_yaw_deg, max_yaw_deg)
        tx, ty = rng.uniform(-max_translation_m, max_translation_m, size=2)
        result.append(RigidTransform(rotation_z(yaw), (tx, ty, 0.0)))
    return result


# ---------------------------------------------------------------------------
# Geometry of the synthetic world
# ---------------------------------------------------------------------------


def body_height(body: BodyModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Heightfield of *body* at body-frame ``(x, y)``; zero off the footprint."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    ax = np.abs(2.0 * x / body.length)
    ay = np.abs(2.0 * y / body.width)
    inside = (ax < 1.0) & (ay < 1.0)
    heights = np.zeros(x.shape)
    if not inside.any():
        return heights
    px, py = body.length_exponent, body.width_exponent
    taper = (1.0 - ax[inside] ** px) ** (1.0 / px)
    profile = (1.0 - ay[inside] ** py) ** (1.0 / py)
    heights[inside] = body.height * taper * profile
    if body.bulge_amplitude:
        bx, by = body.bulge_center
        r2 = (x[inside] - bx) ** 2 + (y[inside] - by) ** 2
        heights[inside] *= 1.0 + body.bulge_amplitude * np.exp(-r2 / (2.0 * body.bulge_width**2))
    return heights


def marker_world_corners(marker: MarkerPlacement) -> np.ndarray:
    """``(4, 3)`` floor-frame corners in detection order."""
    placement = RigidTransform(rotation_z(marker.yaw_deg), (*marker.center, 0.0))
    return transform_points(canonical_marker_corners(marker.side), placement)


def _pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions ``(x_n, y_n, 1)`` of every pixel centre, row-major."""
    v, u = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    return np.column_stack(
        (
            ((u - intrinsics.cx) / intrinsics.fx).ravel(),
            ((v - intrinsics.cy) / intrinsics.fy).ravel(),
            np.ones(u.size),
        )
    )


def _cast_body(
    body: BodyModel, origin: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """Ray parameter of the first body intersection per ray (body frame), inf on miss."""
    hits = np.full(len(directions), np.inf)
    dz = directions[:, 2]
    descending = dz < 0
    if not descending.any() or origin[2] <= 0:
        return hits

    t_top = np.maximum((body.max_height - origin[2]) / np.where(descending, dz, -1.0), 0.0)
    t_bottom = -origin[2] / np.where(descending, dz, -1.0)

    # Keep rays whose segment between the two planes can cross the footprint.
    xa = origin[0] + t_top * directions[:, 0]
    xb = origin[0] + t_bottom * directions[:, 0]
    ya = origin[1] + t_top * directions[:, 1]
    yb = origin[1] + t_bottom * directions[:, 1]
    half_l, half_w = body.length / 2.0, body.width / 2.0
    candidate = (
        descending
        & (np.minimum(xa, xb) < half_l)
        & (np.maximum(xa, xb) > -half_l)
        & (np.minimum(ya, yb) < half_w)
        & (np.maximum(ya, yb) > -half_w)
    )
    rays = np.flatnonzero(candidate)
    if rays.size == 0:
        return hits

    d = directions[rays]
    lo_t, hi_t = t_top[rays], t_bottom[rays]

    def gap(t: np.ndarray, which: np.ndarray) -> np.ndarray:
        p = origin + t[:, None] * d[which]
        return p[:, 2] - body_height(body, p[:, 0], p[:, 1])

    everyone = np.arange(rays.size)
    samples = lo_t[None, :] + (hi_t - lo_t)[None, :] * (
        np.arange(MARCH_STEPS + 1)[:, None] / MARCH_STEPS
    )
    gaps = np.stack([gap(samples[s], everyone) for s in range(MARCH_STEPS + 1)])
    below = gaps < 0
    crossed = below.any(axis=0)
    if not crossed.any():
        return hits

    which = np.flatnonzero(crossed)
    first = np.maximum(below[:, which].argmax(axis=0), 1)
    lo = samples[first - 1, which]
    hi = samples[first, which]
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        above = gap(mid, which) >= 0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    hits[rays[which]] = 0.5 * (lo + hi)
    return hits


def _clean_depth(spec: SyntheticSceneSpec, camera: RigidTransform) -> np.ndarray:
    """Noise-free ``(H, W)`` depth seen from floor-frame *camera*; NaN where nothing is hit."""
    k = spec.intrinsics
    rays = _pixel_rays(k)
    directions = rays @ camera.rotation.T
    origin = camera.translation

    depth = np.full(len(rays), np.inf)
    dz = directions[:, 2]
    floor = (dz < 0) & (origin[2] > 0)
    depth[floor] = -origin[2] / dz[floor]

    to_body = invert(spec.body_pose)
    body_origin = to_body.rotation @ origin + to_body.translation
    body_dirs = directions @ to_body.rotation.T
    depth = np.minimum(depth, _cast_body(spec.body, body_origin, body_dirs))

    depth[~np.isfinite(depth) | (depth <= 0)] = np.nan
    return depth.reshape(k.height, k.width)


def _observe_markers(
    spec: SyntheticSceneSpec,
    camera: RigidTransform,
    clean: np.ndarray,
    rng: np.random.Generator,
) -> tuple[MarkerObservation, ...]:
    k = spec.intrinsics
    world_to_camera = invert(camera)
    observations = []
    for marker in spec.markers:
        world = marker_world_corners(marker)
        local = transform_points(world, world_to_camera)
        if not (local[:, 2] > 0).all():
            continue
        pixels = np.column_stack(
            (
                k.fx * local[:, 0] / local[:, 2] + k.cx,
                k.fy * local[:, 1] / local[:, 2] + k.cy,
            )
        )
        inside = (
            (pixels[:, 0] >= 0)
            & (pixels[:, 0] <= k.width - 1)
            & (pixels[:, 1] >= 0)
            & (pixels[:, 1] <= k.height - 1)
        )
        if not inside.all():
            continue
        if (camera.translation - world.mean(axis=0))[2] <= 0:
            continue
        cols = np.floor(pixels[:, 0] + 0.5).astype(int)
        rows = np.floor(pixels[:, 1] + 0.5).astype(int)
        seen = clean[rows, cols]
        if not (np.isfinite(seen) & (seen >= local[:, 2] - OCCLUSION_SLACK)).all():
            continue
        if spec.noise.corner_sigma_px > 0:
            pixels = pixels + rng.normal(0.0, spec.noise.corner_sigma_px, size=(4, 2))
            pixels = np.clip(pixels, 0.0, [k.width - 1, k.height - 1])
        observations.append(MarkerObservation(marker.marker_id, pixels))
    return tuple(observations)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_depth(
    spec: SyntheticSceneSpec, pose_index: int, intrinsics: CameraIntrinsics | None = None
) -> DepthKeyframe:
    """
    Render keyframe *pose_index* of *spec*.

    Args:
        spec: Scene description; camera poses are floor-frame.
        pose_index: Index into ``spec.camera_path``.
        intrinsics: Camera override; defaults to ``spec.intrinsics``.

    Returns:
        Keyframe with noisy depth, dropout mask, marker detections and the
        exact camera pose.

    Raises:
        InvalidInputError: If *pose_index* is out of range.
    """
    if not 0 <= pose_index < len(spec.camera_path):
        raise InvalidInputError(
            f"Pose index {pose_index} out of range for {len(spec.camera_path)} camera poses"
        )
    if intrinsics is not None and intrinsics != spec.intrinsics:
        spec = dataclasses.replace(spec, intrinsics=intrinsics)
    camera = spec.camera_path[pose_index]
    rng = np.random.default_rng([spec.seed, pose_index])

    clean = _clean_depth(spec, camera)
    valid = np.isfinite(clean)
    depth = np.where(valid, clean, 0.0)
    if spec.noise.depth_sigma_m > 0:
        depth = depth + rng.normal(0.0, spec.noise.depth_sigma_m, size=depth.shape)
    if spec.noise.dropout > 0:
        valid &= rng.random(depth.shape) >= spec.noise.dropout
    valid &= depth > 0
    depth = np.where(valid, depth, 0.0)

    observations = _observe_markers(spec, camera, clean, rng)
    return DepthKeyframe(pose_index, depth, valid, camera, observations)


def perturb_poses(
    poses: Sequence[RigidTransform],
    rotation_sigma_deg: float,
    translation_sigma_m: float,
    seed: int,
) -> list[RigidTransform]:
    """
    Simulate tracker drift on camera-to-world poses.

    Each pose is composed with a camera-frame rigid error: rotation about a
    uniformly random axis by ``|N(0, rotation_sigma_deg)|`` and translation
    ``N(0, translation_sigma_m)`` per axis.
    """
    if rotation_sigma_deg < 0 or translation_sigma_m < 0:
        raise InvalidInputError("Perturbation spreads must be >= 0")
    if rotation_sigma_deg == 0 and translation_sigma_m == 0:
        return list(poses)
    rng = np.random.default_rng(seed)
    perturbed = []
    for pose in poses:
        axis = rng.normal(size=3)
        angle = abs(rng.normal(0.0, rotation_sigma_deg)) if rotation_sigma_deg else 0.0
        shift = rng.normal(0.0, translation_sigma_m, size=3) if translation_sigma_m else np.zeros(3)
        error = RigidTransform(rotation_about_axis(axis, angle), shift)
        perturbed.append(compose(pose, error))
    return perturbed


def render_scene(
    spec: SyntheticSceneSpec,
    displacement: RigidTransform | None = None,
    seed: int | None = None,
    name: str = "scene",
) -> SyntheticScene:
    """
    Render a full scan with the body displaced by *displacement* on the floor.

    Cameras follow the body, so the recorded poses are ``spec.camera_path``
    in the scene frame (perturbed by the tracker noise).

    Args:
        spec: Reference-placement scene description.
        displacement: Body displacement D on the floor; identity by default.
        seed: Seed of this scan's noise; ``spec.seed`` by default.
        name: Scene label.
    """
    displacement = displacement or RigidTransform.identity()
    seed = spec.seed if seed is None else seed
    world = dataclasses.replace(
        spec,
        camera_path=tuple(compose(displacement, p) for p in spec.camera_path),
        body_pose=compose(displacement, spec.body_pose),
        seed=seed,
    )
    recorded = perturb_poses(
        spec.camera_path,
        spec.noise.rotation_sigma_deg,
        spec.noise.translation_sigma_m,
        seed,
    )
    keyframes = []
    for index, pose in enumerate(recorded):
        frame = render_depth(world, index)
        keyframes.append(dataclasses.replace(frame, pose=pose))

    to_scene = invert(displacement)
    truth = GroundTruth(
        displacement=displacement,
        marker_corners={
            m.marker_id: transform_points(marker_world_corners(m), to_scene) for m in spec.markers
        },
        camera_poses=tuple(spec.camera_path),
    )
    observed = sorted({o.marker_id for f in keyframes for o in f.observations})
    logger.info(
        "Rendered %r: %d keyframes, markers observed %s", name, len(keyframes), observed
    )
    scene = Scene(name, spec.intrinsics, tuple(keyframes), ground_truth=displacement)
    return SyntheticScene(scene, truth)


# ---------------------------------------------------------------------------
# Datasets on disk
# ---------------------------------------------------------------------------


def write_scene(synthetic: SyntheticScene, path: Path | str) -> Path:
    """Write the scan and its ground-truth sidecar as a dataset directory."""
    return write_dataset(synthetic.scene, path)


def make_pair(
    spec: SyntheticSceneSpec, displacement: RigidTransform, output_dir: Path | str
) -> tuple[Path, Path, GroundTruth]:
    """
    Write a reference scan and a scan with the body displaced.

    The reference uses ``spec.seed`` and the current scan ``spec.seed + 1``.

    Returns:
        ``(reference_dir, current_dir, current_ground_truth)``
    """
    output_dir = Path(output_dir)
    reference = render_scene(spec, None, spec.seed, "reference")
    current = render_scene(spec, displacement, spec.seed + 1, "current")
    ref_dir = write_scene(reference, output_dir / "reference")
    cur_dir = write_scene(current, output_dir / "current")
    return ref_dir, cur_dir, current.truth


def make_position_series(
    spec: SyntheticSceneSpec,
    displacements: Sequence[RigidTransform],
    output_dir: Path | str,
) -> list[Path]:
    """Write one scan per body placement, scan k seeded with ``spec.seed + k``."""
    output_dir = Path(output_dir)
    paths = []
    for k, displacement in enumerate(displacements):
        name = f"position_{k:02d}"
        scene = render_scene(spec, displacement, spec.seed + k, name)
        paths.append(write_scene(scene, output_dir / name))
    return paths
