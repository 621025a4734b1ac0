"""
Pipeline Service

Orchestrates a full positioning run:
depth keyframes → point clouds → Global ICP → 3D marker corners → scene
alignment → reference-marker frame → heightmaps → error map and overlay.

Each step is timed under a fixed stage name and any failure is re-raised
tagged with the stage it happened in. Artifact writing is tagged but untimed.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.core.config import PipelineConfig
from src.core.exceptions import PatientAlignError
from src.repositories.artifacts import ArtifactRepository
from src.schemas.compare import HeightDifferenceStats, PoseError, RgbImage
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.heightmap import HeightMap
from src.schemas.scene import Scene, SceneMarkerCorners
from src.services.compare import (
    error_map,
    height_difference_stats,
    overlay,
    pose_error,
    render_heightmap,
)
from src.services.geometry import back_project_image, compose, invert, transform_cloud
from src.services.heightmap import (
    HeightMapAccumulator,
    build_keyframe_heightmap,
    heightmap_to_cloud,
    reference_marker_transform,
    segment_heightmap,
    select_reference_marker,
)
from src.services.markers import align_scene, corner_rms, scene_corners, transform_corners
from src.services.registration import IcpObserver, apply_refinement, global_icp

logger = logging.getLogger(__name__)

STAGE_EXTRACT = "Extracting Pointclouds"
STAGE_ICP = "Global ICP"
STAGE_CORNERS = "Finding 3D Corner Positions"
STAGE_ALIGN = "Scene Alignment"
STAGE_HEIGHTMAP = "Heightmap Creation"
STAGE_COMPARE = "Error Map and Overlay Creation"
STAGES = (STAGE_EXTRACT, STAGE_ICP, STAGE_CORNERS, STAGE_ALIGN, STAGE_HEIGHTMAP, STAGE_COMPARE)
STAGE_WRITE = "Writing Outputs"

_STAGE_FAILURES = (PatientAlignError, OSError, ArithmeticError, ValueError, np.linalg.LinAlgError)


class PipelineStageError(PatientAlignError):
    """Raised when a pipeline stage fails; wraps the original error."""

    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage} failed: {cause}")


@dataclass
class SceneReconstruction:
    """One scene after cloud extraction, refinement and corner lifting.

    Attributes:
        scene: Input scan.
        clouds: Refined per-keyframe clouds in scene coordinates.
        refinements: Global ICP transform per keyframe.
        corners: Averaged marker corners in scene coordinates.
    """

    scene: Scene
    clouds: list[PointCloud]
    refinements: list[RigidTransform]
    corners: SceneMarkerCorners


@dataclass
class PipelineResult:
    """Everything a run produced.

    ``current`` and the comparison fields are None for a single-scene run.
    """

    reference: SceneReconstruction
    current: SceneReconstruction | None
    reference_marker_id: int
    marker_frame: RigidTransform
    reference_heightmap: HeightMap
    current_heightmap: HeightMap | None = None
    alignment: RigidTransform | None = None
    error_image: RgbImage | None = None
    overlay_image: RgbImage | None = None
    height_stats: HeightDifferenceStats | None = None
    alignment_error: PoseError | None = None
    corner_rms_before: float | None = None
    corner_rms_after: float | None = None
    timings: dict[str, float | None] = field(default_factory=dict)
    total_seconds: float = 0.0


@contextmanager
def _tagged(stage: str) -> Iterator[None]:
    """Re-raise failures inside the block as PipelineStageError for *stage*."""
    try:
        yield
    except PipelineStageError:
        raise
    except _STAGE_FAILURES as e:
        logger.error("Stage %r failed: %s", stage, e)
        raise PipelineStageError(stage, e) from e


class _StageClock:
    """Accumulates wall-clock time per stage and tags failures with the stage."""

    def __init__(self) -> None:
        self.seconds: dict[str, float | None] = dict.fromkeys(STAGES)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            with _tagged(name):
                yield
        finally:
            self.seconds[name] = (self.seconds[name] or 0.0) + time.perf_counter() - start


class PositioningPipeline:
    """Reconstructs scans, aligns them and compares their heightmaps.

    Args:
        config: Run parameters; defaults to ``PipelineConfig()``.
        icp_observer: Optional Global ICP instrumentation callback.
    """

    def __init__(
        self, config: PipelineConfig | None = None, icp_observer: IcpObserver | None = None
    ) -> None:
        self.config = config or PipelineConfig()
        self._icp_observer = icp_observer

    # -- building blocks ----------------------------------------------------

    def extract_clouds(self, scene: Scene) -> list[PointCloud]:
        """Back-project every keyframe and place it in scene coordinates by its pose."""
        clouds = [
            transform_cloud(
                back_project_image(frame.depth, frame.valid, scene.intrinsics), frame.pose
            )
            for frame in scene.keyframes
        ]
        logger.info(
            "Scene %r: %d keyframe clouds, %d points",
            scene.name,
            len(clouds),
            sum(len(c) for c in clouds),
        )
        return clouds

    def refine(self, scene: Scene, clouds: list[PointCloud]) -> list[RigidTransform]:
        """Global ICP refinements, or identities when refinement is disabled."""
        if not self.config.global_icp_enabled or not clouds:
            return [RigidTransform.identity() for _ in clouds]
        logger.info("Scene %r: running Global ICP", scene.name)
        return global_icp(clouds, self.config.icp_config(), self._icp_observer)

    def lift_corners(
        self, scene: Scene, refinements: list[RigidTransform]
    ) -> SceneMarkerCorners:
        return scene_corners(scene, refinements, self.config.corner_window_px)

    def reconstruct(self, scene: Scene) -> SceneReconstruction:
        """Clouds, refinements and marker corners of one scene, untimed."""
        raw = self.extract_clouds(scene)
        refinements = self.refine(scene, raw)
        return SceneReconstruction(
            scene,
            apply_refinement(raw, refinements),
            refinements,
            self.lift_corners(scene, refinements),
        )

    def build_heightmap(
        self, reconstruction: SceneReconstruction, to_marker: RigidTransform
    ) -> tuple[HeightMap, PointCloud]:
        """
        Merged heightmap of a scene whose coordinates *to_marker* maps into
        the reference-marker frame.

        Returns:
            ``(heightmap, marker_frame_cloud)``; the cloud is empty unless
            point-cloud export is enabled.
        """
        params = self.config.heightmap_params()
        accumulator = HeightMapAccumulator(params)
        exported: list[PointCloud] = []
        for cloud in reconstruction.clouds:
            local = transform_cloud(cloud, to_marker)
            accumulator.add(build_keyframe_heightmap(local, params))
            if self.config.export_point_clouds:
                exported.append(local)
        heightmap = accumulator.result()
        logger.info(
            "Scene %r: heightmap %dx%d with %d defined cells",
            reconstruction.scene.name,
            *params.shape,
            heightmap.defined_count,
        )
        return heightmap, PointCloud.concatenate(exported)

    # -- full run -----------------------------------------------------------

    def run(
        self,
        reference: Scene,
        current: Scene | None = None,
        output_dir: Path | str | None = None,
    ) -> PipelineResult:
        """Run every stage and optionally write all artifacts.

        Args:
            reference: Reference scan (index 0); defines the marker frame.
            current: Scan to align and compare; None runs the reference only.
            output_dir: Where to write artifacts; nothing is written if None.

        Returns:
            PipelineResult with stage timings.

        Raises:
            PipelineStageError: If any stage fails.
        """
        clock = _StageClock()
        started = time.perf_counter()
        scenes = [reference] if current is None else [reference, current]

        # 1. Point clouds
        with clock.stage(STAGE_EXTRACT):
            raw = [self.extract_clouds(s) for s in scenes]

        # 2. Global ICP
        if self.config.global_icp_enabled:
            with clock.stage(STAGE_ICP):
                refinements = [self.refine(s, c) for s, c in zip(scenes, raw, strict=True)]
        else:
            logger.info("Global ICP disabled")
            refinements = [[RigidTransform.identity() for _ in c] for c in raw]

        # 3. Marker corners
        with clock.stage(STAGE_CORNERS):
            corners = [self.lift_corners(s, r) for s, r in zip(scenes, refinements, strict=True)]
        reconstructions = [
            SceneReconstruction(s, apply_refinement(c, r), r, k)
            for s, c, r, k in zip(scenes, raw, refinements, corners, strict=True)
        ]
        ref_rec = reconstructions[0]
        cur_rec = reconstructions[1] if current is not None else None

        # 4. Scene alignment (current scene only; the reference stays put)
        alignment = None
        rms_before = rms_after = None
        if cur_rec is not None:
            with clock.stage(STAGE_ALIGN):
                alignment = align_scene(cur_rec.corners, ref_rec.corners)
                rms_before = corner_rms(cur_rec.corners, ref_rec.corners)
                rms_after = corner_rms(transform_corners(cur_rec.corners, alignment), ref_rec.corners)
                logger.info("Corner RMS %.6f m -> %.6f m", rms_before, rms_after)

        # 5. Heightmaps in the reference-marker frame
        with clock.stage(STAGE_HEIGHTMAP):
            marker_id = select_reference_marker(ref_rec.corners, self.config.reference_marker_id)
            marker_frame = reference_marker_transform(
                ref_rec.corners, marker_id, self.config.marker_side_m
            )
            ref_map, ref_cloud = self.build_heightmap(ref_rec, marker_frame)
            cur_map = cur_cloud = None
            if cur_rec is not None and alignment is not None:
                cur_map, cur_cloud = self.build_heightmap(cur_rec, compose(marker_frame, alignment))

        result = PipelineResult(
            reference=ref_rec,
            current=cur_rec,
            reference_marker_id=marker_id,
            marker_frame=marker_frame,
            reference_heightmap=ref_map,
            current_heightmap=cur_map,
            alignment=alignment,
            corner_rms_before=rms_before,
            corner_rms_after=rms_after,
        )

        # 6. Comparison
        if cur_map is not None:
            with clock.stage(STAGE_COMPARE):
                shown_ref, shown_cur = self._visible(ref_map), self._visible(cur_map)
                result.error_image = error_map(shown_ref, shown_cur)
                result.overlay_image = overlay(shown_ref, shown_cur)
                result.height_stats = height_difference_stats(ref_map, cur_map)
                result.alignment_error = self._alignment_error(reference, current, alignment)

        result.timings = clock.seconds
        result.total_seconds = time.perf_counter() - started

        if output_dir is not None:
            with _tagged(STAGE_WRITE):
                self.write_outputs(result, ArtifactRepository(output_dir), ref_cloud, cur_cloud)
        logger.info("Pipeline finished in %.3f s", result.total_seconds)
        return result

    def _visible(self, heightmap: HeightMap) -> HeightMap:
        """Heightmap as shown in images, blanking cells under the segmentation floor."""
        floor = self.config.segmentation_floor_m
        if floor is None:
            return heightmap
        return segment_heightmap(heightmap, floor)

    @staticmethod
    def _alignment_error(
        reference: Scene, current: Scene | None, alignment: RigidTransform | None
    ) -> PoseError | None:
        if current is None or alignment is None:
            return None
        if reference.ground_truth is None or current.ground_truth is None:
            return None
        truth = compose(invert(reference.ground_truth), current.ground_truth)
        error = pose_error(alignment, truth)
        logger.info(
            "Alignment error vs ground truth: %.6f deg, %.6f mm",
            error.rotation_deg,
            error.translation_mm,
        )
        return error

    # -- persistence --------------------------------------------------------

    def write_outputs(
        self,
        result: PipelineResult,
        repository: ArtifactRepository,
        reference_cloud: PointCloud | None = None,
        current_cloud: PointCloud | None = None,
    ) -> None:
        """Write every artifact of *result* below the repository root."""
        floor = self.config.segmentation_floor_m
        pairs = [("reference", result.reference, result.reference_heightmap, reference_cloud)]
        if result.current is not None and result.current_heightmap is not None:
            pairs.append(("current", result.current, result.current_heightmap, current_cloud))

        for name, rec, heightmap, cloud in pairs:
            repository.save_transforms(
                {f.keyframe_id: t for f, t in zip(rec.scene.keyframes, rec.refinements, strict=True)},
                "keyframe_transforms.txt",
                name,
            )
            repository.save_marker_corners(rec.corners, "marker_corners.txt", name)
            if self.config.export_point_clouds and cloud is not None:
                repository.save_cloud(cloud, "cloud.ply", name)
            repository.save_heightmap(heightmap, "heightmap.txt", name)
            repository.save_image(render_heightmap(heightmap, floor), "heightmap.ppm", name)
            repository.save_cloud(heightmap_to_cloud(heightmap), "heightmap_cloud.ply", name)

        if result.alignment is not None:
            repository.save_transform(result.alignment, "alignment.txt")
        if result.error_image is not None:
            repository.save_image(result.error_image, "error_map.ppm")
        if result.overlay_image is not None:
            repository.save_image(result.overlay_image, "overlay.ppm")
        repository.save_report(self.metrics(result), "metrics.txt")
        repository.save_timing(list(result.timings.items()), result.total_seconds)
        logger.info("Artifacts written to %s", repository.root)

    @staticmethod
    def metrics(result: PipelineResult) -> dict[str, object]:
        """Deterministic summary of a run for ``metrics.txt``."""
        values: dict[str, object] = {
            "reference_scene": result.reference.scene.name,
            "reference_keyframes": len(result.reference.scene),
            "reference_marker_id": result.reference_marker_id,
            "reference_defined_cells": result.reference_heightmap.defined_count,
        }
        if result.current is not None:
            values["current_scene"] = result.current.scene.name
            values["current_keyframes"] = len(result.current.scene)
        if result.current_heightmap is not None:
            values["current_defined_cells"] = result.current_heightmap.defined_count
        if result.corner_rms_before is not None:
            values["corner_rms_before_m"] = result.corner_rms_before
            values["corner_rms_after_m"] = result.corner_rms_after
        if result.height_stats is not None:
            values["overlap_cells"] = result.height_stats.overlap_cells
            if result.height_stats.mean_abs_m is not None:
                values["mean_abs_height_difference_m"] = result.height_stats.mean_abs_m
                values["max_abs_height_difference_m"] = result.height_stats.max_abs_m
        if result.alignment_error is not None:
            values["rotation_error_deg"] = result.alignment_error.rotation_deg
            values["translation_error_mm"] = result.alignment_error.translation_mm
        return values
