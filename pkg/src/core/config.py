"""
Application Configuration

Environment-bound settings (Pydantic BaseSettings, loaded from environment
variables or a .env file) and the per-run pipeline parameter set read from
plain-text ``key = value`` files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.exceptions import ConfigError
from src.schemas.heightmap import HeightMapParams
from src.schemas.registration import IcpConfig


class Settings(BaseSettings):
    """
    Application settings with environment variable binding.

    Optional env vars:
        LOG_LEVEL (INFO), OUTPUT_DIR (output), DEFAULT_SEED (0)
    """

    # Logging
    LOG_LEVEL: str = "INFO"

    # Outputs
    OUTPUT_DIR: Path = Path("output")

    # Synthetic data / subsampling seed used when the CLI gets no --seed
    DEFAULT_SEED: int = 0

    model_config = SettingsConfigDict(
        env_file=".env",
        env_ignore_empty=True,
        extra="ignore",  # Silently ignore unknown env vars
    )


settings = Settings()


class PipelineConfig(BaseModel):
    """Every tunable of a reconstruction and alignment run.

    Keys spell out the parameter and carry their unit suffix so configuration
    files stay self-describing.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Global ICP
    icp_iterations: int = Field(default=20, ge=1)
    r_min_m: float = Field(default=0.005, gt=0)
    r_max_m: float = Field(default=0.05, gt=0)
    subsample_radius_m: float = Field(default=0.02, gt=0)
    icp_relaxation: float | None = Field(default=None, gt=0, le=1)
    global_icp_enabled: bool = True

    # Marker corners
    corner_window_px: int = Field(default=11, ge=1)
    marker_side_m: float = Field(default=0.104, gt=0)
    reference_marker_id: int | None = Field(default=None, ge=0)

    # Heightmap
    x_min_m: float = -0.1
    x_max_m: float = 2.0
    y_min_m: float = -0.2
    y_max_m: float = 1.0
    grid_step_m: float = Field(default=0.0015, gt=0)
    top_threshold_m: float = Field(default=0.03, gt=0)
    segmentation_floor_m: float | None = None

    # Run
    rng_seed: int = 0
    export_point_clouds: bool = True

    @model_validator(mode="after")
    def _cross_field_checks(self) -> PipelineConfig:
        if self.r_min_m > self.r_max_m:
            raise ValueError(f"r_min_m ({self.r_min_m}) must not exceed r_max_m ({self.r_max_m})")
        if not self.x_min_m < self.x_max_m:
            raise ValueError("x_min_m must be smaller than x_max_m")
        if not self.y_min_m < self.y_max_m:
            raise ValueError("y_min_m must be smaller than y_max_m")
        if self.corner_window_px % 2 == 0:
            raise ValueError(f"corner_window_px must be odd, got {self.corner_window_px}")
        return self

    def icp_config(self) -> IcpConfig:
        """Global ICP parameters of this run."""
        return IcpConfig(
            iterations=self.icp_iterations,
            r_min=self.r_min_m,
            r_max=self.r_max_m,
            subsample_radius=self.subsample_radius_m,
            rng_seed=self.rng_seed,
            relaxation=self.icp_relaxation,
        )

    def heightmap_params(self) -> HeightMapParams:
        """Heightmap grid of this run."""
        return HeightMapParams(
            grid_step=self.grid_step_m,
            x_min=self.x_min_m,
            x_max=self.x_max_m,
            y_min=self.y_min_m,
            y_max=self.y_max_m,
            top_threshold=self.top_threshold_m,
            marker_side=self.marker_side_m,
        )


def load_pipeline_config(path: Path | str) -> PipelineConfig:
    """
    Parse a ``key = value`` configuration file into a PipelineConfig.

    Blank lines and ``#`` comments are ignored; values are handed to pydantic
    as strings so its coercion decides types (``none`` clears optional keys).

    Raises:
        ConfigError: If the file is missing, a line is malformed, a key is
            unknown or repeated, or a value fails validation.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read configuration ({e})") from e

    known = set(PipelineConfig.model_fields)
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
        if key not in known:
            raise ConfigError(f"{path}:{number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{number}: duplicate key {key!r} (first on line {lines[key]})")
        values[key] = None if value.lower() == "none" else value
        lines[key] = number

    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first["loc"] else ""
        where = f"{path}:{lines[field]}" if field in lines else str(path)
        raise ConfigError(f"{where}: {first['msg']}") from e
