"""
Registration Schemas

Correspondence sets, the Global ICP parameter model and the per-iteration
record handed to instrumentation observers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.exceptions import InvalidInputError
from src.schemas.geometry import RigidTransform


@dataclass(frozen=True, slots=True, eq=False)
class CorrespondenceSet:
    """Paired source/target points for rigid registration.

    Attributes:
        sources: ``(N, 3)`` points to be moved.
        targets: ``(N, 3)`` points they should land on.
    """

    sources: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        sources = np.array(self.sources, dtype=np.float64).reshape(-1, 3)
        targets = np.array(self.targets, dtype=np.float64).reshape(-1, 3)
        if sources.shape != targets.shape:
            raise InvalidInputError(
                f"{len(sources)} sources cannot pair with {len(targets)} targets"
            )
        if not (np.all(np.isfinite(sources)) and np.all(np.isfinite(targets))):
            raise InvalidInputError("Correspondences must have finite coordinates")
        sources.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return int(self.sources.shape[0])


class IcpConfig(BaseModel):
    """Parameters of the joint multi-cloud Global ICP.

    Attributes:
        iterations: Number of refinement iterations (N_I).
        r_min: Final correspondence radius in meters.
        r_max: Initial correspondence radius in meters.
        subsample_radius: Poisson-disk radius in meters applied before iterating.
        rng_seed: Seed of the subsampling permutation, shared by every cloud.
        relaxation: Fraction of each per-iteration update that is applied.
            ``None`` selects ``(N_C - 1) / N_C``; ``1.0`` applies full updates.
    """

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=20, ge=1)
    r_min: float = Field(default=0.005, gt=0)
    r_max: float = Field(default=0.05, gt=0)
    subsample_radius: float = Field(default=0.02, gt=0)
    rng_seed: int = 0
    relaxation: float | None = Field(default=None, gt=0, le=1)

    @model_validator(mode="after")
    def _radius_order(self) -> IcpConfig:
        if self.r_min > self.r_max:
            raise ValueError(f"r_min ({self.r_min}) must not exceed r_max ({self.r_max})")
        return self

    @property
    def radius_step(self) -> float:
        """Linear radius decrement per iteration."""
        return (self.r_max - self.r_min) / self.iterations

    def radius_at(self, iteration: int) -> float:
        """Correspondence radius of the 1-based *iteration*."""
        return self.r_max - (iteration - 1) * self.radius_step


@dataclass(frozen=True, slots=True, eq=False)
class IcpIterationRecord:
    """Snapshot of one Global ICP iteration, captured before transforms apply.

    Attributes:
        iteration: 1-based iteration number.
        radius: Correspondence radius used in this iteration.
        correspondences: One set per cloud (L_j).
        mean_residual: Mean pair distance over all correspondences, or NaN when
            no pair was found.
        updates: Per-cloud incremental transform applied after the snapshot.
    """

    iteration: int
    radius: float
    correspondences: tuple[CorrespondenceSet, ...]
    mean_residual: float
    updates: tuple[RigidTransform, ...]
