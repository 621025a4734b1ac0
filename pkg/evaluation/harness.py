"""Positioning evaluation harness.

Scores the marker-based scene alignment against synthetic ground truth
with the multi-position protocol: the body is scanned at several floor
placements, every scan is reconstructed once, then each scan in turn is the
reference and all others are aligned to it. The ground-truth transform taking
scan j onto reference scan i is ``D_i^-1 D_j``.

Errors are aggregated per reference scan and in total (mean and median of
rotation and translation error) and serialized to JSON.

Usage (CLI)::

    python -m evaluation.harness --trials 20
"""

from __future__ import annotations

import argparse
import json
import logging
import tempfile
import time
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path

import pandas as pd

from evaluation.metrics_pose import per_reference_summary, total_summary
from evaluation.schemas import EvalConfig
from src.core.exceptions import PatientAlignError
from src.repositories.dataset import read_dataset
from src.services.compare import pose_error
from src.services.geometry import compose, invert
from src.services.markers import align_scene
from src.services.pipeline import PositioningPipeline, SceneReconstruction
from src.services.synthgen import (
    default_intrinsics,
    default_scene_spec,
    make_position_series,
    position_displacements,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------


@dataclass
class PairResult:
    """Alignment error of one (reference, current) scan pair."""

    trial: int
    reference: int
    current: int
    rotation_deg: float
    translation_mm: float


@dataclass
class EvalResults:
    """Aggregated outcome of an evaluation run.

    Attributes:
        config: Configuration the run used.
        pairs: Every scored pair.
        failures: Pairs that could not be aligned, as ``(trial, ref, cur, reason)``.
        elapsed_s: Wall-clock duration of the run.
    """

    config: EvalConfig
    pairs: list[PairResult] = field(default_factory=list)
    failures: list[tuple[int, int, int, str]] = field(default_factory=list)
    elapsed_s: float = 0.0

    def frame(self) -> pd.DataFrame:
        """Pairs as a DataFrame (one row per pair)."""
        columns = ["trial", "reference", "current", "rotation_deg", "translation_mm"]
        return pd.DataFrame([vars(p) for p in self.pairs], columns=columns)

    @property
    def total(self) -> dict[str, float]:
        return total_summary(self.frame())

    def to_dict(self) -> dict:
        """JSON-serializable summary including per-pair detail."""
        per_reference = per_reference_summary(self.frame()).reset_index()
        return {
            "config": self.config.model_dump(),
            "total": self.total,
            "per_reference": per_reference.to_dict(orient="records"),
            "pairs": [vars(p) for p in self.pairs],
            "failures": [list(f) for f in self.failures],
            "elapsed_s": self.elapsed_s,
        }


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


class PositioningHarness:
    """Runs the multi-position alignment protocol on synthetic scans.

    Args:
        config: Evaluation configuration.
    """

    def __init__(self, config: EvalConfig | None = None) -> None:
        self.config = config or EvalConfig()
        self._pipeline = PositioningPipeline(self.config.pipeline)

    def run(self, workdir: Path | None = None) -> EvalResults:
        """Run every trial; datasets go to *workdir* or a temporary directory."""
        started = time.perf_counter()
        results = EvalResults(config=self.config)
        if workdir is None:
            with tempfile.TemporaryDirectory(prefix="patientalign-eval-") as tmp:
                self._run_trials(Path(tmp), results)
        else:
            self._run_trials(Path(workdir), results)
        results.elapsed_s = time.perf_counter() - started
        if results.pairs:
            total = results.total
            logger.info(
                "Evaluation %r: %d pairs, median %.3f deg / %.3f mm",
                self.config.name,
                total["pairs"],
                total["median_rotation_deg"],
                total["median_translation_mm"],
            )
        return results

    def _run_trials(self, workdir: Path, results: EvalResults) -> None:
        for trial in range(self.config.trials):
            self.run_trial(trial, workdir / f"trial_{trial:03d}", results)

    def run_trial(self, trial: int, workdir: Path, results: EvalResults) -> None:
        """Render, reconstruct and cross-align one position series."""
        cfg = self.config
        seed = cfg.seed + trial
        spec = default_scene_spec(
            noise=cfg.noise,
            seed=seed * 1000,
            keyframes=cfg.keyframes,
            intrinsics=default_intrinsics(cfg.width, cfg.height),
        )
        displacements = position_displacements(
            cfg.positions, seed, cfg.max_translation_m, cfg.max_yaw_deg
        )
        paths = make_position_series(spec, displacements, workdir)
        reconstructions: list[SceneReconstruction] = [
            self._pipeline.reconstruct(read_dataset(p)) for p in paths
        ]

        for i, reference in enumerate(reconstructions):
            for j, current in enumerate(reconstructions):
                if i == j:
                    continue
                try:
                    estimate = align_scene(current.corners, reference.corners)
                except PatientAlignError as e:
                    logger.warning("Trial %d: cannot align %d onto %d (%s)", trial, j, i, e)
                    results.failures.append((trial, i, j, str(e)))
                    continue
                truth = compose(invert(displacements[i]), displacements[j])
                error = pose_error(estimate, truth)
                results.pairs.append(
                    PairResult(trial, i, j, error.rotation_deg, error.translation_mm)
                )
        logger.info("Trial %d done: %d scans", trial, len(reconstructions))

    def save_results(self, results: EvalResults, output_dir: Path) -> Path:
        """Serialize results to ``eval_{name}_{YYYYMMDD_HHMMSS}.json`` in *output_dir*."""
        output_dir.mkdir(parents=True, exist_ok=True)
        ts = datetime.now(tz=UTC).strftime("%Y%m%d_%H%M%S")
        output_path = output_dir / f"eval_{results.config.name}_{ts}.json"
        output_path.write_text(json.dumps(results.to_dict(), indent=2), encoding="utf-8")
        logger.info("Results saved → %s", output_path)
        return output_path


# ---------------------------------------------------------------------------
# CLI entry point
# ---------------------------------------------------------------------------


def _parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Multi-position alignment evaluation on synthetic scans",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--trials", type=int, default=20, help="Seeded repetitions")
    parser.add_argument("--positions", type=int, default=9, help="Body placements per trial")
    parser.add_argument("--seed", type=int, default=0, help="Base seed")
    parser.add_argument("--output", default="evaluation/results", help="Results directory")
    return parser.parse_args()


def _main() -> None:
    """Run the noisy-regime evaluation and print the totals."""
    from src.core.logging import setup_logging  # noqa: PLC0415

    setup_logging()
    args = _parse_args()
    config = EvalConfig(trials=args.trials, positions=args.positions, seed=args.seed)
    harness = PositioningHarness(config)
    results = harness.run()
    path = harness.save_results(results, Path(args.output))
    total = results.total
    print("\n=== Evaluation Summary ===")
    print(
        f"  pairs={total['pairs']}  "
        f"rotation mean={total['mean_rotation_deg']:.3f} median={total['median_rotation_deg']:.3f} deg  "
        f"translation mean={total['mean_translation_mm']:.3f} "
        f"median={total['median_translation_mm']:.3f} mm  → {path.name}"
    )


if __name__ == "__main__":
    _main()
