"""Plane cuts and contour rasterization."""
from __future__ import annotations

import numpy as np
import pytest

from cine2mesh.geometry import (
    Contour,
    ContourSet,
    SlicePlane,
    load_contours,
    rasterize,
    save_contours,
    slice_mesh,
)
from cine2mesh.shapemodel import icosphere, synth_base_heart
from tests.test_geometry_mesh import sphere_mesh


class TestSlicePlane:
    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            SlicePlane.from_normal((0, 0, 0), (0, 0, 0))

    def test_basis_is_orthonormal(self):
        plane = SlicePlane.from_normal((1, 2, 3), (1, 1, 0))
        for a, b in [(plane.normal, plane.basis_u), (plane.normal, plane.basis_v), (plane.basis_u, plane.basis_v)]:
            assert abs(a @ b) < 1e-12
        for v in (plane.normal, plane.basis_u, plane.basis_v):
            assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_project_lift_round_trip(self):
        plane = SlicePlane.from_normal((5, -2, 1), (0.3, -0.4, 0.86))
        pts2d = np.array([[1.0, 2.0], [-3.0, 0.5]])
        back = plane.project(plane.lift(pts2d))
        np.testing.assert_allclose(back, pts2d, atol=1e-12)

    def test_lifted_points_lie_on_plane(self):
        plane = SlicePlane.from_normal((1, 1, 1), (2, -1, 0.5))
        pts = plane.lift(np.random.default_rng(0).normal(size=(20, 2)) * 40)
        np.testing.assert_allclose(plane.signed_distance(pts), 0.0, atol=1e-9)


class TestSliceMesh:
    def test_plane_missing_mesh_gives_empty_set(self):
        mesh = sphere_mesh(radius=10.0)
        plane = SlicePlane.from_normal((0, 0, 50.0), (0, 0, 1))
        assert slice_mesh(mesh, plane).is_empty()

    def test_sphere_cut_is_circle_of_pythagorean_radius(self):
        # Sphere radius 10 cut at height 6: circle radius sqrt(100-36) = 8.
        mesh = sphere_mesh(radius=10.0, subdivisions=3)
        plane = SlicePlane.from_normal((0, 0, 6.0), (0, 0, 1))
        contours = slice_mesh(mesh, plane).contours["LV"]
        assert len(contours) == 1
        circle = contours[0]
        assert circle.closed
        assert circle.perimeter() == pytest.approx(2 * np.pi * 8.0, rel=0.01)
        radii = np.linalg.norm(circle.points, axis=1)
        np.testing.assert_allclose(radii, 8.0, rtol=0.01)

    def test_closed_chambers_give_closed_polylines(self):
        heart = synth_base_heart(seed=1)
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        cut = slice_mesh(heart, plane)
        assert not cut.is_empty()
        for name, contours in cut.contours.items():
            for c in contours:
                assert c.closed, f"open contour in {name}"

    def test_contour_points_lie_on_plane_when_lifted(self):
        heart = synth_base_heart(seed=2)
        plane = SlicePlane.from_normal((3.0, 1.0, 5.0), (0.2, 0.9, 0.4))
        cut = slice_mesh(heart, plane)
        pts = cut.points3d()
        assert len(pts)
        np.testing.assert_allclose(plane.signed_distance(pts), 0.0, atol=1e-9)

    def test_vertex_on_plane_handled(self):
        # Octahedron sliced exactly through its equator vertices.
        v = np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=np.float64,
        )
        f = np.array(
            [
                [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
            ],
            dtype=np.int64,
        )
        from cine2mesh.geometry import SurfaceMesh

        mesh = SurfaceMesh(v, f, {"LV": np.arange(8)})
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        contours = slice_mesh(mesh, plane).contours["LV"]
        assert len(contours) == 1
        assert contours[0].closed
        assert len(contours[0].points) == 4


class TestRasterize:
    def _square_contours(self, side=20.0):
        half = side / 2
        pts = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        return ContourSet(plane=plane, contours={"LV": [Contour(points=pts, closed=True)]})

    def test_empty_contours_all_background(self):
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        img = rasterize(ContourSet(plane=plane), size=16, mm_per_px=1.0)
        assert img.shape == (16, 16)
        assert (img == 0).all()

    def test_square_area_within_five_percent(self):
        img = rasterize(self._square_contours(20.0), size=64, mm_per_px=1.0)
        area = int((img == 1).sum())
        assert abs(area - 400) / 400 < 0.05

    def test_inner_contour_wins(self):
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        outer = Contour(
            points=np.array([[-10.0, -10.0], [10.0, -10.0], [10.0, 10.0], [-10.0, 10.0]]),
            closed=True,
        )
        inner = Contour(
            points=np.array([[-4.0, -4.0], [4.0, -4.0], [4.0, 4.0], [-4.0, 4.0]]),
            closed=True,
        )
        cs = ContourSet(plane=plane, contours={"Myo": [outer], "LV": [inner]})
        img = rasterize(cs, size=32, mm_per_px=1.0)
        from cine2mesh.geometry import LABEL_IDS

        assert img[16, 16] == LABEL_IDS["LV"]
        # col 8 -> x = -7.5 mm: inside the outer square, outside the inner one
        assert img[16, 8] == LABEL_IDS["Myo"]

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError, match="size"):
            rasterize(self._square_contours(), size=4, mm_per_px=1.0)

    def test_deterministic(self):
        a = rasterize(self._square_contours(), size=48, mm_per_px=0.7, center=(1.0, -2.0))
        b = rasterize(self._square_contours(), size=48, mm_per_px=0.7, center=(1.0, -2.0))
        np.testing.assert_array_equal(a, b)


class TestContourIO:
    def test_round_trip(self, tmp_path):
        heart = synth_base_heart(seed=4)
        plane = SlicePlane.from_normal((0, 0, 10.0), (0.1, 0.2, 0.97))
        cut = slice_mesh(heart, plane)
        path = tmp_path / "cut.contours"
        save_contours(cut, path)
        loaded = load_contours(path)
        assert set(loaded.contours) == set(cut.contours)
        for name in cut.contours:
            assert len(loaded.contours[name]) == len(cut.contours[name])
            for a, b in zip(loaded.contours[name], cut.contours[name]):
                assert a.closed == b.closed
                np.testing.assert_allclose(a.points, b.points, atol=1e-8)
        np.testing.assert_allclose(loaded.plane.normal, cut.plane.normal, atol=1e-9)
