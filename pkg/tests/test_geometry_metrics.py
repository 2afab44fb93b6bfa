"""Surface sampling and average surface distance."""
from __future__ import annotations

import numpy as np
import pytest

from cine2mesh.geometry import (
    RigidTransform,
    average_surface_distance,
    closest_points_on_mesh,
    point_cloud_asd,
    point_to_mesh_distances,
    refine_alignment_to_surface,
    sample_surface_points,
    slice_mesh,
    SlicePlane,
)
from cine2mesh.shapemodel import synth_base_heart
from tests.test_geometry_mesh import sphere_mesh, unit_cube


class TestSampling:
    def test_points_lie_on_sphere(self):
        mesh = sphere_mesh(radius=10.0, subdivisions=3)
        pts = sample_surface_points(mesh, "LV", count=500, seed=1)
        radii = np.linalg.norm(pts, axis=1)
        assert radii.max() <= 10.0 + 1e-9
        assert radii.min() > 9.8  # inside the chord sag of subdivision 3

    def test_seeded_determinism(self):
        mesh = sphere_mesh()
        a = sample_surface_points(mesh, "LV", count=100, seed=5)
        b = sample_surface_points(mesh, "LV", count=100, seed=5)
        np.testing.assert_array_equal(a, b)


class TestPointToMesh:
    def test_on_surface_points_have_zero_distance(self):
        mesh = unit_cube(side=10.0)
        pts = sample_surface_points(mesh, count=200, seed=2)
        d = point_to_mesh_distances(pts, mesh)
        assert d.max() < 1e-9

    def test_exterior_point_distance(self):
        mesh = unit_cube(side=2.0)  # cube [0,2]^3
        d = point_to_mesh_distances(np.array([[1.0, 1.0, 5.0]]), mesh)
        assert d[0] == pytest.approx(3.0, abs=1e-12)

    def test_closest_point_projection(self):
        mesh = unit_cube(side=2.0)
        closest, d = closest_points_on_mesh(np.array([[5.0, 1.0, 1.0]]), mesh)
        np.testing.assert_allclose(closest[0], [2.0, 1.0, 1.0], atol=1e-12)
        assert d[0] == pytest.approx(3.0)

    def test_edge_and_vertex_regions(self):
        mesh = unit_cube(side=2.0)
        # Beyond a cube corner: closest point is the corner itself.
        closest, d = closest_points_on_mesh(np.array([[3.0, 3.0, 3.0]]), mesh)
        np.testing.assert_allclose(closest[0], [2.0, 2.0, 2.0], atol=1e-12)
        assert d[0] == pytest.approx(np.sqrt(3.0))


class TestPointCloudAsd:
    def test_identical_clouds_zero(self):
        pts = np.random.default_rng(3).normal(size=(100, 3))
        assert point_cloud_asd(pts, pts) == 0.0

    def test_uniform_offset_is_the_offset(self):
        # Planar samples in the y-z plane shifted 1 mm along x (the plane
        # normal): every point's nearest neighbor is its own shifted copy.
        grid = np.stack(
            np.meshgrid(np.linspace(0, 40, 50), np.linspace(0, 40, 50), indexing="ij"),
            axis=-1,
        ).reshape(-1, 2)
        plane_pts = np.column_stack([np.zeros(len(grid)), grid])
        moved = plane_pts + np.array([1.0, 0.0, 0.0])
        assert point_cloud_asd(plane_pts, moved) == pytest.approx(1.0, abs=1e-9)

    def test_parallel_planes_three_mm(self):
        # Densely sampled parallel patches 3 mm apart: the mean nearest
        # neighbor distance approaches 3 mm from above (lateral jitter).
        rng = np.random.default_rng(5)
        a = np.column_stack([rng.uniform(0, 40, size=(6000, 2)), np.zeros(6000)])
        b = np.column_stack([rng.uniform(0, 40, size=(6000, 2)), np.full(6000, 3.0)])
        asd = point_cloud_asd(a, b)
        assert abs(asd - 3.0) / 3.0 < 0.02

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(80, 3))
        b = rng.normal(size=(120, 3)) + 0.5
        assert point_cloud_asd(a, b) == pytest.approx(point_cloud_asd(b, a), rel=1e-12)


class TestAverageSurfaceDistance:
    def test_contours_on_own_mesh_are_at_zero(self):
        heart = synth_base_heart(seed=6)
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        cut = slice_mesh(heart, plane)
        for name in cut.structures():
            asd = average_surface_distance(heart, cut, structure=name, mode="gt_to_mesh")
            assert asd < 1e-9

    def test_translated_mesh_distance(self):
        heart = synth_base_heart(seed=7)
        plane = SlicePlane.from_normal((0, 0, 5.0), (0, 0, 1))
        cut = slice_mesh(heart, plane)
        moved = heart.translated((2.0, 0.0, 0.0))
        asd = average_surface_distance(moved, cut, structure="LV", mode="gt_to_mesh")
        # A 2 mm translation cannot move surface points further than 2 mm.
        assert 0.1 < asd <= 2.0 + 1e-9

    def test_symmetric_mode_uses_both_directions(self):
        heart = synth_base_heart(seed=8)
        pts = sample_surface_points(heart, "LV", count=800, seed=9)
        sym = average_surface_distance(heart, pts, structure="LV", mode="symmetric", seed=10)
        one_way = average_surface_distance(heart, pts, structure="LV", mode="gt_to_mesh")
        assert one_way < 1e-9
        assert sym >= one_way

    def test_empty_ground_truth_rejected(self):
        heart = synth_base_heart(seed=9)
        with pytest.raises(ValueError, match="empty"):
            average_surface_distance(heart, np.empty((0, 3)), structure="LV")


class TestRefinement:
    def test_refines_back_to_exact_alignment(self):
        heart = synth_base_heart(seed=10)
        plane = SlicePlane.from_normal((0, 0, 0), (0, 0, 1))
        pts = slice_mesh(heart, plane).points3d()
        # Start from a slightly wrong alignment; on-surface sources should
        # refine to machine-precision identity.
        theta = np.deg2rad(2.0)
        rot = np.array(
            [
                [np.cos(theta), -np.sin(theta), 0],
                [np.sin(theta), np.cos(theta), 0],
                [0, 0, 1],
            ]
        )
        init = RigidTransform(rotation=rot, translation=np.array([0.8, -0.5, 0.3]))
        refined = refine_alignment_to_surface(pts, heart, init, iterations=15)
        d = point_to_mesh_distances(refined.apply(pts), heart)
        assert d.mean() < 1e-6
