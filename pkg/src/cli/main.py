"""
Command-Line Interface

Usage::

    patientalign synth --output-dir data/pair --dx 0.05 --dy 0.02 --yaw 5
    patientalign pipeline data/pair/reference data/pair/current --output-dir out
    patientalign reconstruct data/pair/reference
    patientalign align data/pair/reference data/pair/current
    patientalign align out/reference/marker_corners.txt out/current/marker_corners.txt
    patientalign heightmap data/pair/reference
    patientalign compare out/reference/heightmap.txt out/current/heightmap.txt

Global flags (before the subcommand): ``--config`` for a ``key = value``
pipeline configuration, ``--output-dir`` and ``--seed``. Domain errors exit
with status 1, usage errors with status 2.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from src.core.config import PipelineConfig, load_pipeline_config, settings
from src.core.exceptions import PatientAlignError
from src.core.logging import setup_logging
from src.repositories.artifacts import (
    ArtifactRepository,
    read_heightmap,
    read_marker_corners,
    write_image,
    write_key_values,
)
from src.repositories.dataset import read_dataset, write_rigid_transform
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.scene import Scene, SceneMarkerCorners
from src.schemas.synthetic import NoiseModel
from src.services.compare import error_map, height_difference_stats, overlay, pose_error
from src.services.geometry import compose, invert, rotation_z
from src.services.markers import align_scene
from src.services.pipeline import PositioningPipeline
from src.services.synthgen import default_intrinsics, default_scene_spec, make_pair

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_pipeline_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config.model_copy(update={"rng_seed": args.seed})
    return config


def _output_dir(args: argparse.Namespace) -> Path:
    return Path(args.output_dir) if args.output_dir else settings.OUTPUT_DIR


def _print_transform(label: str, transform: RigidTransform) -> None:
    print(f"{label}:")
    for row, t in zip(transform.rotation, transform.translation, strict=True):
        print("  " + " ".join(f"{v: .9f}" for v in row) + f" | {t: .6f}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else settings.DEFAULT_SEED
    noise = NoiseModel.realistic() if args.noise == "realistic" else NoiseModel()
    spec = default_scene_spec(
        noise=noise,
        seed=seed,
        keyframes=args.keyframes,
        intrinsics=default_intrinsics(args.width, args.height),
    )
    displacement = RigidTransform(rotation_z(args.yaw), (args.dx, args.dy, 0.0))
    ref_dir, cur_dir, _ = make_pair(spec, displacement, _output_dir(args))
    print(f"reference: {ref_dir}")
    print(f"current:   {cur_dir}")
    return 0


def _cmd_reconstruct(args: argparse.Namespace) -> int:
    pipeline = PositioningPipeline(_pipeline_config(args))
    scene = read_dataset(args.dataset)
    rec = pipeline.reconstruct(scene)
    repo = ArtifactRepository(_output_dir(args))
    repo.save_transforms(
        {f.keyframe_id: t for f, t in zip(scene.keyframes, rec.refinements, strict=True)},
        "keyframe_transforms.txt",
        scene.name,
    )
    repo.save_marker_corners(rec.corners, "marker_corners.txt", scene.name)
    print(f"markers lifted: {rec.corners.marker_ids}")
    if pipeline.config.export_point_clouds:
        repo.save_cloud(PointCloud.concatenate(rec.clouds), "cloud.ply", scene.name)
    print(f"outputs: {repo.root / scene.name}")
    return 0


def _scene_corners(
    path: Path, pipeline: PositioningPipeline
) -> tuple[SceneMarkerCorners, Scene | None]:
    """Corners from a marker_corners.txt file, or lifted from a dataset directory."""
    if path.is_file():
        return read_marker_corners(path), None
    scene = read_dataset(path)
    return pipeline.reconstruct(scene).corners, scene


def _cmd_align(args: argparse.Namespace) -> int:
    pipeline = PositioningPipeline(_pipeline_config(args))
    ref_corners, reference = _scene_corners(args.reference, pipeline)
    cur_corners, current = _scene_corners(args.current, pipeline)
    alignment = align_scene(cur_corners, ref_corners)
    path = write_rigid_transform(alignment, _output_dir(args) / "alignment.txt")
    _print_transform("alignment", alignment)
    if (
        reference is not None
        and current is not None
        and reference.ground_truth is not None
        and current.ground_truth is not None
    ):
        truth = compose(invert(reference.ground_truth), current.ground_truth)
        error = pose_error(alignment, truth)
        print(f"error: {error.rotation_deg:.6f} deg, {error.translation_mm:.6f} mm")
    print(f"written: {path}")
    return 0


def _cmd_heightmap(args: argparse.Namespace) -> int:
    pipeline = PositioningPipeline(_pipeline_config(args))
    result = pipeline.run(read_dataset(args.dataset), None, _output_dir(args))
    print(
        f"heightmap: {result.reference_heightmap.defined_count} defined cells "
        f"(reference marker {result.reference_marker_id})"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    reference = read_heightmap(args.reference)
    current = read_heightmap(args.current)
    out = _output_dir(args)
    write_image(error_map(reference, current), out / "error_map.ppm")
    write_image(overlay(reference, current), out / "overlay.ppm")
    stats = height_difference_stats(reference, current)
    write_key_values(stats.model_dump(), out / "metrics.txt")
    print(f"overlap cells: {stats.overlap_cells}")
    if stats.mean_abs_m is not None:
        print(f"mean |dh|: {stats.mean_abs_m:.6f} m, max |dh|: {stats.max_abs_m:.6f} m")
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    pipeline = PositioningPipeline(_pipeline_config(args))
    reference = read_dataset(args.reference)
    current = read_dataset(args.current) if args.current else None
    result = pipeline.run(reference, current, _output_dir(args))
    if result.alignment is not None:
        _print_transform("alignment", result.alignment)
    if result.alignment_error is not None:
        print(
            f"error: {result.alignment_error.rotation_deg:.6f} deg, "
            f"{result.alignment_error.translation_mm:.6f} mm"
        )
    for stage, seconds in result.timings.items():
        print(f"  {stage:<32} {'skipped' if seconds is None else f'{seconds:.3f} s'}")
    print(f"  {'Total':<32} {result.total_seconds:.3f} s")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patientalign",
        description="Point-cloud reconstruction and marker-based alignment for patient positioning",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--config", type=Path, help="Pipeline configuration file (key = value)")
    parser.add_argument("--output-dir", type=Path, help="Output directory (default: OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Seed for synthesis and subsampling")
    parser.add_argument("--log-level", help="Override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Render a synthetic reference/current dataset pair")
    synth.add_argument("--dx", type=float, default=0.05, help="Body shift along x (m)")
    synth.add_argument("--dy", type=float, default=0.02, help="Body shift along y (m)")
    synth.add_argument("--yaw", type=float, default=5.0, help="Body rotation about z (deg)")
    synth.add_argument("--keyframes", type=int, default=15, help="Keyframes per scene")
    synth.add_argument("--width", type=int, default=320, help="Image width (px)")
    synth.add_argument("--height", type=int, default=240, help="Image height (px)")
    synth.add_argument("--noise", choices=("none", "realistic"), default="none")
    synth.set_defaults(handler=_cmd_synth)

    recon = sub.add_parser("reconstruct", help="Refine one scan and lift its marker corners")
    recon.add_argument("dataset", type=Path)
    recon.set_defaults(handler=_cmd_reconstruct)

    align = sub.add_parser(
        "align",
        help="Align a current scan to a reference scan (datasets or marker_corners.txt files)",
    )
    align.add_argument("reference", type=Path)
    align.add_argument("current", type=Path)
    align.set_defaults(handler=_cmd_align)

    heightmap = sub.add_parser("heightmap", help="Heightmap of a single scan")
    heightmap.add_argument("dataset", type=Path)
    heightmap.set_defaults(handler=_cmd_heightmap)

    compare = sub.add_parser("compare", help="Error map and overlay of two heightmap files")
    compare.add_argument("reference", type=Path)
    compare.add_argument("current", type=Path)
    compare.set_defaults(handler=_cmd_compare)

    pipeline = sub.add_parser("pipeline", help="Full run: reconstruct, align, compare")
    pipeline.add_argument("reference", type=Path)
    pipeline.add_argument("current", type=Path, nargs="?")
    pipeline.set_defaults(handler=_cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse *argv* and run the selected subcommand; returns the exit status."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return int(args.handler(args))
    except PatientAlignError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
