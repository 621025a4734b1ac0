"""Markdown evaluation report generator for PatientAlign-Lite.

Reads every ``eval_*.json`` file produced by
:class:`~evaluation.harness.PositioningHarness` from a results directory and
writes one Markdown report with, per run, a table of rotation and
translation errors for each reference scan plus a total row.

Usage (CLI)::

    python -m evaluation.report_generator
"""

from __future__ import annotations

import json
import logging
from datetime import UTC, datetime
from pathlib import Path

logger = logging.getLogger(__name__)

_HEADER = (
    "| Reference scan | Rotation mean (°) | Rotation median (°) "
    "| Translation mean (mm) | Translation median (mm) | Pairs |"
)
_SEP = "|---|---|---|---|---|---|"


class ReportGenerator:
    """Generates a Markdown evaluation report from JSON result files."""

    def generate(self, results_dir: Path, output_dir: Path | None = None) -> Path:
        """Read all JSON results and write a Markdown report.

        Args:
            results_dir: Directory containing ``eval_*.json`` files.
            output_dir: Report directory, created if absent. Defaults to
                ``results_dir.parent / "reports"``.

        Returns:
            Path to the generated Markdown file.

        Raises:
            FileNotFoundError: If *results_dir* does not exist.
            ValueError: If no result files are found.
        """
        if not results_dir.exists():
            raise FileNotFoundError(f"Results directory not found: {results_dir}")
        resolved_output_dir = output_dir if output_dir is not None else results_dir.parent / "reports"
        resolved_output_dir.mkdir(parents=True, exist_ok=True)

        runs = self._load_results(results_dir)
        if not runs:
            raise ValueError(f"No valid eval_*.json files found in {results_dir}")

        timestamp = datetime.now(tz=UTC).strftime("%Y-%m-%d %H:%M UTC")
        sections = [
            "# PatientAlign-Lite: Positioning Evaluation Report\n\n"
            f"**Date** : {timestamp}  \n"
            f"**Runs** : {len(runs)}  \n"
            "**Target** : median ≤ 2° and ≤ 15 mm\n"
        ]
        for name, data in runs:
            sections.append(self.format_run(name, data))

        output_path = resolved_output_dir / f"report_{datetime.now(tz=UTC):%Y%m%d_%H%M%S}.md"
        output_path.write_text("\n".join(sections), encoding="utf-8")
        logger.info("Report written → %s", output_path)
        return output_path

    def format_run(self, name: str, data: dict) -> str:
        """Markdown section with the per-reference error table of one run."""
        config = data.get("config", {})
        rows = [f"## {name}\n"]
        rows.append(
            f"{config.get('positions', '?')} positions × {config.get('trials', '?')} trials, "
            f"{config.get('keyframes', '?')} keyframes per scan\n"
        )
        rows += [_HEADER, _SEP]
        for entry in data.get("per_reference", []):
            rows.append(self._row(str(int(entry["reference"]) + 1), entry))
        rows.append(self._row("**Total**", data["total"]))
        failures = data.get("failures", [])
        if failures:
            rows.append(f"\n_{len(failures)} pair(s) could not be aligned._")
        return "\n".join(rows) + "\n"

    @staticmethod
    def _row(label: str, values: dict) -> str:
        return (
            f"| {label} "
            f"| {values['mean_rotation_deg']:.3f} "
            f"| {values['median_rotation_deg']:.3f} "
            f"| {values['mean_translation_mm']:.3f} "
            f"| {values['median_translation_mm']:.3f} "
            f"| {int(values['pairs'])} |"
        )

    @staticmethod
    def _load_results(results_dir: Path) -> list[tuple[str, dict]]:
        runs = []
        for path in sorted(results_dir.glob("eval_*.json")):
            try:
                runs.append((path.stem, json.loads(path.read_text(encoding="utf-8"))))
            except json.JSONDecodeError:
                logger.warning("Skipping unreadable result file %s", path)
        return runs


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    generator = ReportGenerator()
    print(generator.generate(Path("evaluation/results")))
