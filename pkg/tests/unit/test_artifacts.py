"""Tests for the artifact file formats."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.repositories.artifacts import (
    ArtifactRepository,
    read_heightmap,
    read_image,
    read_marker_corners,
    read_ply,
    write_heightmap,
    write_image,
    write_key_values,
    write_marker_corners,
    write_ply,
    write_timing,
    write_transforms,
)
from src.repositories.dataset import DatasetFormatError, read_rigid_transform
from src.schemas.compare import RgbImage
from src.schemas.geometry import PointCloud, RigidTransform
from src.schemas.heightmap import HeightMap, HeightMapParams
from src.schemas.scene import SceneMarkerCorners
from src.services.geometry import rotation_z


class TestPly:
    def test_header_and_points(self, tmp_path: Path) -> None:
        """ASCII PLY with vertex count and xyz properties."""
        path = write_ply(PointCloud([[0.5, -1.0, 2.0], [1e-3, 0.0, 3.25]]), tmp_path / "c.ply")
        lines = path.read_text().splitlines()
        assert lines[:3] == ["ply", "format ascii 1.0", "element vertex 2"]
        assert "end_header" in lines
        assert np.allclose(read_ply(path).points, [[0.5, -1.0, 2.0], [1e-3, 0.0, 3.25]])

    def test_colours(self, tmp_path: Path) -> None:
        """Coloured clouds carry uchar red/green/blue."""
        cloud = PointCloud([[0.0, 0.0, 0.0]], np.array([[10, 20, 30]]))
        path = write_ply(cloud, tmp_path / "c.ply")
        assert "property uchar red" in path.read_text()
        loaded = read_ply(path)
        assert loaded.colors is not None and loaded.colors.tolist() == [[10, 20, 30]]

    def test_empty_cloud(self, tmp_path: Path) -> None:
        """An empty cloud writes a valid header with zero vertices."""
        assert len(read_ply(write_ply(PointCloud.empty(), tmp_path / "e.ply"))) == 0


class TestHeightmapFile:
    def test_round_trip_with_undefined_cells(self, tmp_path: Path) -> None:
        """Grid parameters and NaN cells survive."""
        params = HeightMapParams(grid_step=0.25, x_min=-0.5, x_max=0.5, y_min=0.0, y_max=0.5)
        heights = np.full(params.shape, np.nan)
        heights[1, 0] = 0.125
        heights[3, 1] = -0.5
        loaded = read_heightmap(write_heightmap(HeightMap(params, heights), tmp_path / "h.txt"))
        assert loaded.params == params
        assert np.array_equal(loaded.heights, heights, equal_nan=True)

    def test_header_must_match_data(self, tmp_path: Path) -> None:
        """A wrong row count is reported."""
        params = HeightMapParams(grid_step=0.5, x_min=0.0, x_max=1.0, y_min=0.0, y_max=1.0)
        path = write_heightmap(HeightMap.undefined(params), tmp_path / "h.txt")
        path.write_text(path.read_text() + "nan nan\n")
        with pytest.raises(DatasetFormatError):
            read_heightmap(path)


class TestImages:
    def test_ppm_round_trip(self, tmp_path: Path) -> None:
        """P6 header then RGB bytes, rows top to bottom."""
        pixels = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        path = write_image(RgbImage(pixels), tmp_path / "i.ppm")
        assert path.read_bytes().startswith(b"P6\n3 2\n255\n")
        assert np.array_equal(read_image(path).pixels, pixels)

    def test_not_a_ppm(self, tmp_path: Path) -> None:
        """Other formats are rejected."""
        path = tmp_path / "i.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(DatasetFormatError):
            read_image(path)


class TestReports:
    def test_marker_corners_round_trip(self, tmp_path: Path) -> None:
        """Corner rows keep NaN for unsupported corners."""
        positions = np.arange(12, dtype=float).reshape(4, 3) / 10
        positions[2] = np.nan
        corners = SceneMarkerCorners({5: positions}, {5: np.array([3, 1, 0, 2])})
        loaded = read_marker_corners(write_marker_corners(corners, tmp_path / "m.txt"))
        assert loaded.marker_ids == [5]
        assert np.array_equal(loaded.corners[5], positions, equal_nan=True)
        assert loaded.support[5].tolist() == [3, 1, 0, 2]

    def test_transforms_sorted_by_id(self, tmp_path: Path) -> None:
        """Keyframe transforms are written in id order after a header."""
        path = write_transforms(
            {4: RigidTransform.identity(), 1: RigidTransform(rotation_z(1.0), (0, 0, 0))},
            tmp_path / "t.txt",
        )
        rows = path.read_text().splitlines()
        assert rows[0].startswith("#")
        assert [r.split()[0] for r in rows[1:]] == ["1", "4"]
        assert all(len(r.split()) == 13 for r in rows[1:])

    def test_key_values(self, tmp_path: Path) -> None:
        """Insertion order, floats at full precision."""
        path = write_key_values({"b": 0.1, "a": 3, "c": None}, tmp_path / "m.txt")
        assert path.read_text().splitlines() == ["b = 0.10000000000000001", "a = 3", "c = None"]

    def test_timing(self, tmp_path: Path) -> None:
        """Every stage is listed, skipped stages are marked, and a total closes the file."""
        path = write_timing([("Global ICP", None), ("Heightmap Creation", 1.23456)], 2.5, tmp_path / "t.txt")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("Global ICP:") and lines[0].endswith("0.000 s (skipped)")
        assert lines[1].endswith("1.235 s")
        assert lines[2].startswith("Total:") and lines[2].endswith("2.500 s")


class TestArtifactRepository:
    def test_scene_subdirectories(self, tmp_path: Path) -> None:
        """Per-scene artifacts go under root/<scene>/."""
        repo = ArtifactRepository(tmp_path / "out")
        path = repo.save_cloud(PointCloud([[0.0, 0.0, 0.0]]), "cloud.ply", "reference")
        assert path == tmp_path / "out" / "reference" / "cloud.ply"
        assert path.is_file()

    def test_transform_round_trip(self, tmp_path: Path) -> None:
        """save_transform writes a transform file read_rigid_transform reads back."""
        repo = ArtifactRepository(tmp_path)
        t = RigidTransform(rotation_z(12.0), (0.3, 0.2, 0.1))
        path = repo.save_transform(t, "alignment.txt")
        assert read_rigid_transform(path).allclose(t, atol=0.0)
