"""Pydantic v2 schemas for the positioning evaluation harness."""

from __future__ import annotations

from pydantic import BaseModel, Field

from src.core.config import PipelineConfig
from src.schemas.synthetic import NoiseModel


class EvalConfig(BaseModel):
    """Configuration of one multi-position evaluation run.

    Every trial renders ``positions`` scans of the body at random floor
    placements; each scan in turn serves as reference for all the others.

    Attributes:
        name: Label used in result file names (e.g. ``"noisy"``).
        positions: Body placements per trial.
        trials: Independently seeded repetitions.
        seed: Base seed; trial k uses ``seed + k``.
        keyframes: Keyframes per scan.
        width: Image width in pixels (height follows the 4:3 default camera).
        height: Image height in pixels.
        max_translation_m: Largest body shift along x and y.
        max_yaw_deg: Largest body rotation about the floor normal.
        noise: Sensor and tracker noise of every scan.
        pipeline: Reconstruction parameters.
    """

    name: str = "noisy"
    positions: int = Field(default=9, ge=2)
    trials: int = Field(default=20, ge=1)
    seed: int = 0
    keyframes: int = Field(default=15, ge=1, le=15)
    width: int = Field(default=320, gt=0)
    height: int = Field(default=240, gt=0)
    max_translation_m: float = Field(default=0.08, ge=0)
    max_yaw_deg: float = Field(default=10.0, ge=0)
    noise: NoiseModel = Field(default_factory=NoiseModel.realistic)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
