"""Aggregation of rigid-transform errors for the positioning evaluation.

All functions take a DataFrame with one row per aligned scan pair and the
columns ``trial``, ``reference``, ``current``, ``rotation_deg`` and
``translation_mm``.
"""

from __future__ import annotations

import pandas as pd

from src.schemas.compare import ErrorSummary, PoseError
from src.services.compare import error_statistics

ERROR_COLUMNS = ("rotation_deg", "translation_mm")


def _summarise(pairs: pd.DataFrame) -> ErrorSummary:
    errors = [
        PoseError(rotation_deg=float(r), translation_mm=float(t))
        for r, t in zip(pairs["rotation_deg"], pairs["translation_mm"], strict=True)
    ]
    return error_statistics(errors)


def _as_row(summary: ErrorSummary) -> dict[str, float]:
    return {
        "mean_rotation_deg": summary.mean_rotation_deg,
        "median_rotation_deg": summary.median_rotation_deg,
        "mean_translation_mm": summary.mean_translation_mm,
        "median_translation_mm": summary.median_translation_mm,
        "pairs": summary.count,
    }


def per_reference_summary(pairs: pd.DataFrame) -> pd.DataFrame:
    """Mean and median of both error components per reference scan index.

    Args:
        pairs: One row per aligned pair.

    Returns:
        DataFrame indexed by reference scan with columns
        ``mean_rotation_deg``, ``median_rotation_deg``,
        ``mean_translation_mm``, ``median_translation_mm`` and ``pairs``.
    """
    rows = {
        reference: _as_row(_summarise(group))
        for reference, group in pairs.groupby("reference")[list(ERROR_COLUMNS)]
    }
    summary = pd.DataFrame.from_dict(rows, orient="index")
    summary.index.name = "reference"
    return summary.sort_index()


def total_summary(pairs: pd.DataFrame) -> dict[str, float]:
    """Mean and median over every pair of every trial.

    Raises:
        InvalidInputError: If *pairs* is empty.
    """
    return _as_row(_summarise(pairs))
