"""
Comparison Schemas

Image carrier for error maps and overlays, and the rigid-transform error
records used by the evaluation protocol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from src.core.exceptions import InvalidInputError


@dataclass(frozen=True, slots=True, eq=False)
class RgbImage:
    """8-bit RGB raster, row-major, row 0 at the top.

    Attributes:
        pixels: ``(height, width, 3)`` uint8 array.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InvalidInputError(f"RGB image must be (H, W, 3), got {pixels.shape}")
        if pixels.dtype != np.uint8:
            raise InvalidInputError(f"RGB image must be uint8, got {pixels.dtype}")
        pixels = pixels.copy()
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class PoseError(BaseModel):
    """Error of an estimated rigid transform against ground truth.

    Attributes:
        rotation_deg: Geodesic angle between the rotations, degrees.
        translation_mm: Euclidean distance between translations, millimeters.
    """

    rotation_deg: float = Field(ge=0, le=180)
    translation_mm: float = Field(ge=0)


class ErrorSummary(BaseModel):
    """Mean and median of a list of pose errors, per component.

    Attributes:
        count: Number of errors summarised.
        mean_rotation_deg: Arithmetic mean of rotation errors.
        median_rotation_deg: Median of rotation errors.
        mean_translation_mm: Arithmetic mean of translation errors.
        median_translation_mm: Median of translation errors.
    """

    count: int
    mean_rotation_deg: float
    median_rotation_deg: float
    mean_translation_mm: float
    median_translation_mm: float


class HeightDifferenceStats(BaseModel):
    """Absolute height differences over cells defined in both maps."""

    overlap_cells: int
    mean_abs_m: float | None = None
    max_abs_m: float | None = None
