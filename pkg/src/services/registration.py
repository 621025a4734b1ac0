"""
Registration Service

Closed-form rigid registration (Horn's quaternion method, scale fixed to 1),
Poisson-disk subsampling, a kd-tree spatial index and the joint multi-cloud
Global ICP that refines every keyframe cloud against all the others at once.

Global ICP outline, per iteration k with radius r_k:
1. For every point of every subsampled cloud, find the nearest point of any
   OTHER cloud closer than r_k. All pairs are captured before anything moves.
2. Per cloud, fit the rigid step to its pairs, shrink it by the relaxation
   factor, compose it onto the cloud's accumulated transform and move the
   subsampled cloud.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from src.core.exceptions import (
    DegenerateGeometryError,
    InsufficientCorrespondencesError,
    InvalidInputError,
)
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.registration import CorrespondenceSet, IcpConfig, IcpIterationRecord
from src.services.geometry import compose, interpolate_transform, transform_cloud, transform_points

logger = logging.getLogger(__name__)

# Relative singular-value floor below which sources count as collinear.
COLLINEAR_TOLERANCE = 1e-9
# Absolute spread (meters) below which sources count as coincident.
COINCIDENT_TOLERANCE = 1e-12

IcpObserver = Callable[[IcpIterationRecord], None]


# ---------------------------------------------------------------------------
# Closed-form registration
# ---------------------------------------------------------------------------


def find_transform(correspondences: CorrespondenceSet) -> RigidTransform:
    """
    Least-squares rigid transform mapping sources onto targets.

    Horn's closed-form absolute orientation: the optimal rotation is the unit
    quaternion maximising ``q^T N q``, i.e. the eigenvector of the largest
    eigenvalue of the symmetric 4x4 matrix N built from the cross-covariance
    of the centred point sets. The translation then maps the source centroid
    onto the target centroid.

    Args:
        correspondences: At least three pairs, sources not collinear.

    Returns:
        RigidTransform minimising ``sum |R s + t - target|^2``.

    Raises:
        InsufficientCorrespondencesError: Fewer than three pairs.
        DegenerateGeometryError: Sources coincident or collinear.
    """
    if len(correspondences) < 3:
        raise InsufficientCorrespondencesError(
            f"Rigid registration needs at least 3 correspondences, got {len(correspondences)}"
        )

    src_centroid = correspondences.sources.mean(axis=0)
    dst_centroid = correspondences.targets.mean(axis=0)
    src = correspondences.sources - src_centroid
    dst = correspondences.targets - dst_centroid

    spread = np.linalg.svd(src, compute_uv=False)
    if spread[0] <= COINCIDENT_TOLERANCE:
        raise DegenerateGeometryError("Correspondence sources are coincident")
    if spread[1] <= COLLINEAR_TOLERANCE * spread[0]:
        raise DegenerateGeometryError("Correspondence sources are collinear")

    m = src.T @ dst
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = m
    n = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    _, vectors = np.linalg.eigh(n)
    w, x, y, z = vectors[:, -1]
    rotation = Rotation.from_quat([x, y, z, w]).as_matrix()
    return RigidTransform(rotation, dst_centroid - rotation @ src_centroid)


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


class SpatialIndex:
    """Radius-bounded nearest-neighbour queries over a fixed point set.

    Thin wrapper over ``scipy.spatial.cKDTree``; an empty point set is allowed
    and answers every query with nothing.
    """

    def __init__(self, points: np.ndarray) -> None:
        self._points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self._points) if len(self._points) else None

    def __len__(self) -> int:
        return int(self._points.shape[0])

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest(self, p: Sequence[float]) -> tuple[int, float] | None:
        """Index of and distance to the closest indexed point, or None if empty."""
        if self._tree is None:
            return None
        distance, index = self._tree.query(np.asarray(p, dtype=np.float64))
        return int(index), float(distance)

    def query_radius(self, p: Sequence[float], radius: float) -> np.ndarray:
        """Sorted indices of points strictly closer than *radius* to *p*."""
        if self._tree is None or radius <= 0:
            return np.empty(0, dtype=np.intp)
        p = np.asarray(p, dtype=np.float64)
        candidates = np.asarray(self._tree.query_ball_point(p, radius), dtype=np.intp)
        if candidates.size == 0:
            return candidates
        distances = np.linalg.norm(self._points[candidates] - p, axis=1)
        return np.sort(candidates[distances < radius])

    def nearest_within(self, queries: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Nearest indexed point for each query row, if strictly closer than *radius*.

        Returns:
            ``(distances, indices)``; rows without a neighbour get ``inf`` and
            index ``-1``.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        distances = np.full(len(queries), np.inf)
        indices = np.full(len(queries), -1, dtype=np.intp)
        if self._tree is None or len(queries) == 0:
            return distances, indices
        found_d, found_i = self._tree.query(queries, k=1, distance_upper_bound=radius)
        hit = found_d < radius
        distances[hit] = found_d[hit]
        indices[hit] = found_i[hit]
        return distances, indices


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Index the points of *cloud* for nearest-neighbour search."""
    return SpatialIndex(cloud.points)


def mean_nearest_neighbor_distance(source: PointCloud, target: PointCloud) -> float:
    """
    Mean distance from each source point to its nearest target point.

    Raises:
        InvalidInputError: If either cloud is empty.
    """
    if len(source) == 0 or len(target) == 0:
        raise InvalidInputError("Nearest-neighbour residual needs two non-empty clouds")
    distances, _ = cKDTree(target.points).query(source.points, k=1)
    return float(np.mean(distances))


# ---------------------------------------------------------------------------
# Subsampling
# ---------------------------------------------------------------------------


def poisson_subsample(cloud: PointCloud, radius: float, seed: int) -> PointCloud:
    """
    Maximal Poisson-disk subset of *cloud* by seeded dart throwing.

    Points are visited in a seeded random order; each undecided point is
    accepted and every undecided point strictly closer than *radius* to it is
    rejected. Retained points are at least *radius* apart and every rejected
    point lies within *radius* of a retained one. Output keeps input order.

    Args:
        cloud: Points to thin out.
        radius: Minimum spacing sigma in meters; 0 keeps every point.
        seed: Seed of the visiting order.
    """
    if radius < 0:
        raise InvalidInputError(f"Subsampling radius must be >= 0, got {radius}")
    if radius == 0 or len(cloud) < 2:
        return cloud

    points = cloud.points
    tree = cKDTree(points)
    order = np.random.default_rng(seed).permutation(len(points))
    undecided = np.ones(len(points), dtype=bool)
    accepted = np.zeros(len(points), dtype=bool)

    for i in order:
        if not undecided[i]:
            continue
        accepted[i] = True
        undecided[i] = False
        neighbours = np.asarray(tree.query_ball_point(points[i], radius), dtype=np.intp)
        close = neighbours[np.linalg.norm(points[neighbours] - points[i], axis=1) < radius]
        undecided[close] = False

    keep = np.flatnonzero(accepted)
    colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(points[keep], colors)


# ---------------------------------------------------------------------------
# Global ICP
# ---------------------------------------------------------------------------


def _collect_correspondences(
    samples: list[np.ndarray], indices: list[SpatialIndex], radius: float
) -> list[CorrespondenceSet]:
    """Nearest other-cloud partner within *radius* for every sampled point."""
    result: list[CorrespondenceSet] = []
    for j, queries in enumerate(samples):
        best_d = np.full(len(queries), np.inf)
        best_t = np.zeros((len(queries), 3))
        for m, index in enumerate(indices):
            if m == j:
                continue
            d, idx = index.nearest_within(queries, radius)
            closer = d < best_d
            best_d[closer] = d[closer]
            best_t[closer] = index.points[idx[closer]]
        found = np.isfinite(best_d)
        result.append(CorrespondenceSet(queries[found], best_t[found]))
    return result


def _mean_residual(correspondences: list[CorrespondenceSet]) -> float:
    distances = [np.linalg.norm(c.targets - c.sources, axis=1) for c in correspondences if len(c)]
    if not distances:
        return float("nan")
    return float(np.mean(np.concatenate(distances)))


def global_icp(
    clouds: Sequence[PointCloud],
    config: IcpConfig | None = None,
    observer: IcpObserver | None = None,
) -> list[RigidTransform]:
    """
    Jointly refine the registration of several overlapping clouds.

    Args:
        clouds: One cloud per keyframe in a common frame; clouds may be empty.
        config: Iterations, radius schedule, subsampling radius, seed and
            relaxation. Defaults to ``IcpConfig()``.
        observer: Optional callable receiving an IcpIterationRecord per
            iteration, after correspondences are captured and updates fitted.

    Returns:
        One refinement per cloud; applying it moves the cloud into agreement
        with the others.

    Raises:
        InvalidInputError: If *clouds* is empty.
    """
    if not clouds:
        raise InvalidInputError("Global ICP needs at least one cloud")
    config = config or IcpConfig()
    count = len(clouds)
    if config.relaxation is not None:
        relaxation = config.relaxation
    else:
        relaxation = (count - 1) / count if count > 1 else 1.0

    transforms = [RigidTransform.identity() for _ in clouds]
    samples = [
        poisson_subsample(c, config.subsample_radius, config.rng_seed).points.copy() for c in clouds
    ]
    logger.info(
        "Global ICP over %d clouds (%d sampled points), %d iterations, relaxation %.3f",
        count,
        sum(len(s) for s in samples),
        config.iterations,
        relaxation,
    )

    for k in range(1, config.iterations + 1):
        radius = config.radius_at(k)
        indices = [SpatialIndex(s) for s in samples]
        correspondences = _collect_correspondences(samples, indices, radius)

        updates: list[RigidTransform] = []
        unrefined = 0
        for j, pairs in enumerate(correspondences):
            try:
                step = find_transform(pairs)
            except (InsufficientCorrespondencesError, DegenerateGeometryError) as e:
                logger.debug("Iteration %d: cloud %d kept in place (%s)", k, j, e)
                updates.append(RigidTransform.identity())
                unrefined += 1
                continue
            if relaxation < 1.0:
                step = interpolate_transform(step, relaxation, pairs.sources.mean(axis=0))
            updates.append(step)

        for j, step in enumerate(updates):
            transforms[j] = compose(step, transforms[j])
            samples[j] = transform_points(samples[j], step)

        residual = _mean_residual(correspondences)
        logger.debug(
            "Iteration %d: r=%.4f m, %d pairs, mean residual %.6f m",
            k,
            radius,
            sum(len(c) for c in correspondences),
            residual,
        )
        if unrefined and count > 1:
            logger.warning("Iteration %d: %d of %d clouds left unrefined", k, unrefined, count)
        if observer is not None:
            observer(IcpIterationRecord(k, radius, tuple(correspondences), residual, tuple(updates)))

    return transforms


def apply_refinement(
    clouds: Sequence[PointCloud], transforms: Sequence[RigidTransform]
) -> list[PointCloud]:
    """Apply each refinement to its cloud."""
    if len(clouds) != len(transforms):
        raise InvalidInputError(f"Got {len(clouds)} clouds but {len(transforms)} transforms")
    return [transform_cloud(c, t) for c, t in zip(clouds, transforms, strict=True)]
