"""
Pytest Configuration and Fixtures

Shared fixtures for unit and integration tests. Synthetic scans are rendered
at 160x120 with six keyframes so full pipeline runs stay within seconds.
"""

from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv

from src.core.config import PipelineConfig
from src.schemas.geometry import CameraIntrinsics, RigidTransform
from src.schemas.synthetic import SyntheticSceneSpec
from src.services.geometry import rotation_z
from src.services.synthgen import default_intrinsics, default_scene_spec, make_pair

load_dotenv()  # .env → os.environ (no-op if file is missing)

SMALL_WIDTH = 160
SMALL_HEIGHT = 120
SMALL_KEYFRAMES = 6

# Body displacement of the "current" scan in most pair fixtures.
PAIR_DISPLACEMENT = RigidTransform(rotation_z(5.0), (0.05, 0.02, 0.0))


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    """Small 160x120 pinhole camera (f = 150 px, principal point at the centre)."""
    return default_intrinsics(SMALL_WIDTH, SMALL_HEIGHT)


@pytest.fixture
def small_spec(intrinsics: CameraIntrinsics) -> SyntheticSceneSpec:
    """Noiseless synthetic scene with six keyframes at 160x120."""
    return default_scene_spec(keyframes=SMALL_KEYFRAMES, intrinsics=intrinsics)


@pytest.fixture
def fast_config() -> PipelineConfig:
    """Pipeline parameters sized for test runs: coarse grid, short ICP."""
    return PipelineConfig(
        icp_iterations=4,
        r_min_m=0.01,
        r_max_m=0.04,
        subsample_radius_m=0.03,
        grid_step_m=0.01,
    )


@pytest.fixture
def noiseless_config(fast_config: PipelineConfig) -> PipelineConfig:
    """Fast configuration with Global ICP disabled (exact poses need no refinement)."""
    return fast_config.model_copy(update={"global_icp_enabled": False})


@pytest.fixture
def pair_dirs(small_spec: SyntheticSceneSpec, tmp_path: Path) -> tuple[Path, Path]:
    """Noiseless reference/current datasets on disk, current displaced by PAIR_DISPLACEMENT."""
    ref_dir, cur_dir, _ = make_pair(small_spec, PAIR_DISPLACEMENT, tmp_path / "data")
    return ref_dir, cur_dir


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random rotation matrix (QR of a Gaussian matrix, det +1)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng: np.random.Generator, scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, size=3))
