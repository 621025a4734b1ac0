"""
Heightmap Schemas

Grid parameters and the per-cell height raster expressed in the reference
marker frame. Undefined cells hold NaN in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.exceptions import InvalidInputError

# Tolerance absorbing float noise in extent/step before taking the ceiling.
_CEIL_SLACK = 1e-9


class HeightMapParams(BaseModel):
    """Grid definition of a heightmap.

    Attributes:
        grid_step: Cell size delta in meters.
        x_min: Lower crop bound along x (meters, marker frame).
        x_max: Upper crop bound along x.
        y_min: Lower crop bound along y.
        y_max: Upper crop bound along y.
        top_threshold: Thickness t below the highest point that still counts
            as top surface.
        marker_side: Side length l of the square markers.
    """

    model_config = ConfigDict(frozen=True)

    grid_step: float = Field(default=0.0015, gt=0)
    x_min: float = -0.1
    x_max: float = 2.0
    y_min: float = -0.2
    y_max: float = 1.0
    top_threshold: float = Field(default=0.03, gt=0)
    marker_side: float = Field(default=0.104, gt=0)

    @model_validator(mode="after")
    def _bounds_ordered(self) -> HeightMapParams:
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min ({self.x_min}) must be < x_max ({self.x_max})")
        if not self.y_min < self.y_max:
            raise ValueError(f"y_min ({self.y_min}) must be < y_max ({self.y_max})")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        """Grid dimensions ``(nx, ny)``."""
        nx = math.ceil((self.x_max - self.x_min) / self.grid_step - _CEIL_SLACK)
        ny = math.ceil((self.y_max - self.y_min) / self.grid_step - _CEIL_SLACK)
        return (max(nx, 1), max(ny, 1))


@dataclass(frozen=True, slots=True, eq=False)
class HeightMap:
    """Per-cell mean top-surface height.

    Attributes:
        params: Grid definition.
        heights: ``(nx, ny)`` float64 array indexed ``[a, b]`` with
            ``a = floor((x - x_min) / delta)``; NaN marks an undefined cell.
    """

    params: HeightMapParams
    heights: np.ndarray

    def __post_init__(self) -> None:
        heights = np.array(self.heights, dtype=np.float64)
        if heights.shape != self.params.shape:
            raise InvalidInputError(
                f"Height array {heights.shape} does not match grid {self.params.shape}"
            )
        if np.isinf(heights).any():
            raise InvalidInputError("Defined heightmap cells must be finite")
        heights.setflags(write=False)
        object.__setattr__(self, "heights", heights)

    @classmethod
    def undefined(cls, params: HeightMapParams) -> HeightMap:
        """A map whose every cell is undefined."""
        return cls(params, np.full(params.shape, np.nan))

    @property
    def defined(self) -> np.ndarray:
        """Boolean mask of defined cells."""
        return ~np.isnan(self.heights)

    @property
    def defined_count(self) -> int:
        """Number of defined cells."""
        return int(self.defined.sum())
