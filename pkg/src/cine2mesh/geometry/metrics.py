"""Surface distance metrics and surface sampling.

Distances from sparse ground-truth contour points to a predicted mesh use
exact point-to-triangle projections; mesh-to-points directions use seeded
uniform-area surface sampling plus nearest-neighbor queries.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .mesh import SurfaceMesh
from .registration import RigidTransform, procrustes
from .slicing import ContourSet


def sample_surface_points(
    mesh: SurfaceMesh,
    structure: str | None = None,
    count: int = 2000,
    seed: int = 0,
) -> np.ndarray:
    """Uniform-area random sample of a (sub-)surface; deterministic per seed."""
    faces = mesh.faces if structure is None else mesh.structure_faces(structure)
    if faces.size == 0:
        raise ValueError("cannot sample an empty surface")
    a = mesh.vertices[faces[:, 0]]
    b = mesh.vertices[faces[:, 1]]
    c = mesh.vertices[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValueError("surface has zero area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(faces), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (
        a[chosen] * w0[:, None] + b[chosen] * w1[:, None] + c[chosen] * w2[:, None]
    )


def _closest_on_triangles(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Closest points on m triangles for n query points; returns (n, m, 3) and (n, m)."""
    ab = b - a
    ac = c - a
    ap = p[:, None, :] - a[None, :, :]
    d1 = np.einsum("mj,nmj->nm", ab, ap)
    d2 = np.einsum("mj,nmj->nm", ac, ap)
    bp = p[:, None, :] - b[None, :, :]
    d3 = np.einsum("mj,nmj->nm", ab, bp)
    d4 = np.einsum("mj,nmj->nm", ac, bp)
    cp = p[:, None, :] - c[None, :, :]
    d5 = np.einsum("mj,nmj->nm", ab, cp)
    d6 = np.einsum("mj,nmj->nm", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n, m = d1.shape
    closest = np.empty((n, m, 3))
    assigned = np.zeros((n, m), dtype=bool)

    def assign(mask: np.ndarray, pts: np.ndarray) -> None:
        nonlocal assigned
        mask = mask & ~assigned
        closest[mask] = pts[mask] if pts.ndim == 3 else pts
        assigned |= mask

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), np.broadcast_to(a, (n, m, 3)))
        assign((d3 >= 0) & (d4 <= d3), np.broadcast_to(b, (n, m, 3)))
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        assign(
            (vc <= 0) & (d1 >= 0) & (d3 <= 0),
            a[None, :, :] + v_ab[:, :, None] * ab[None, :, :],
        )
        assign((d6 >= 0) & (d5 <= d6), np.broadcast_to(c, (n, m, 3)))
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        assign(
            (vb <= 0) & (d2 >= 0) & (d6 <= 0),
            a[None, :, :] + w_ac[:, :, None] * ac[None, :, :],
        )
        denom_bc = (d4 - d3) + (d5 - d6)
        w_bc = np.where(denom_bc != 0, (d4 - d3) / denom_bc, 0.0)
        assign(
            (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
            b[None, :, :] + w_bc[:, :, None] * (c - b)[None, :, :],
        )
        total = va + vb + vc
        total = np.where(total != 0, total, 1.0)
        v = vb / total
        w = vc / total
        assign(
            np.ones((n, m), dtype=bool),
            a[None, :, :] + v[:, :, None] * ab[None, :, :] + w[:, :, None] * ac[None, :, :],
        )
    d = np.linalg.norm(p[:, None, :] - closest, axis=2)
    return closest, d


def _closest_with_faces(
    points: np.ndarray,
    mesh: SurfaceMesh,
    structure: str | None = None,
    block: int = 128,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    faces = mesh.faces if structure is None else mesh.structure_faces(structure)
    if points.size == 0 or faces.size == 0:
        raise ValueError("empty point set or surface")
    a = mesh.vertices[faces[:, 0]]
    b = mesh.vertices[faces[:, 1]]
    c = mesh.vertices[faces[:, 2]]
    out_pts = np.empty_like(points)
    out_d = np.empty(len(points))
    out_f = np.empty(len(points), dtype=np.int64)
    for start in range(0, len(points), block):
        sl = slice(start, start + block)
        closest, d = _closest_on_triangles(points[sl], a, b, c)
        best = d.argmin(axis=1)
        rows = np.arange(len(best))
        out_pts[sl] = closest[rows, best]
        out_d[sl] = d[rows, best]
        out_f[sl] = best
    return out_pts, out_d, out_f


def closest_points_on_mesh(
    points: np.ndarray,
    mesh: SurfaceMesh,
    structure: str | None = None,
    block: int = 128,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact closest surface points and distances for each query point."""
    closest, d, _ = _closest_with_faces(points, mesh, structure, block)
    return closest, d


def point_to_mesh_distances(
    points: np.ndarray, mesh: SurfaceMesh, structure: str | None = None
) -> np.ndarray:
    return closest_points_on_mesh(points, mesh, structure)[1]


def nearest_neighbor_distances(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    targets = np.atleast_2d(targets)
    if points.size == 0 or targets.size == 0:
        raise ValueError("empty point set")
    dists, _ = cKDTree(targets).query(points)
    return dists


def point_cloud_asd(a: np.ndarray, b: np.ndarray, mode: str = "symmetric") -> float:
    """Average nearest-neighbor distance between point clouds (mm)."""
    if mode == "symmetric":
        return 0.5 * (
            float(nearest_neighbor_distances(a, b).mean())
            + float(nearest_neighbor_distances(b, a).mean())
        )
    if mode == "a_to_b":
        return float(nearest_neighbor_distances(a, b).mean())
    raise ValueError(f"unknown mode {mode!r}")


def average_surface_distance(
    predicted: SurfaceMesh,
    gt: ContourSet | np.ndarray,
    structure: str | None = None,
    mode: str = "symmetric",
    samples: int = 2000,
    seed: int = 0,
) -> float:
    """ASD (mm) between a predicted surface and ground-truth contour points.

    ``gt_to_mesh`` averages exact point-to-surface distances of the ground
    truth points (appropriate for sparse contours); ``symmetric`` additionally
    averages sampled-surface-to-ground-truth nearest-neighbor distances and
    returns the mean of the two directions.
    """
    if isinstance(gt, ContourSet):
        gt_points = gt.points3d(structure)
    else:
        gt_points = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if gt_points.size == 0:
        raise ValueError("ground truth point set is empty")
    gt_to_mesh = float(point_to_mesh_distances(gt_points, predicted, structure).mean())
    if mode == "gt_to_mesh":
        return gt_to_mesh
    if mode != "symmetric":
        raise ValueError(f"unknown mode {mode!r}")
    surf = sample_surface_points(predicted, structure, count=samples, seed=seed)
    mesh_to_gt = float(nearest_neighbor_distances(surf, gt_points).mean())
    return 0.5 * (gt_to_mesh + mesh_to_gt)


def refine_alignment_to_surface(
    source_points: np.ndarray,
    mesh: SurfaceMesh,
    init: RigidTransform,
    iterations: int = 10,
    structure: str | None = None,
) -> RigidTransform:
    """Point-to-plane ICP refinement of an initial rigid alignment.

    Pairs each source point with its exact closest surface point and solves
    the linearized point-to-plane system for a small rigid correction; unlike
    point-to-point pairing this does not stall on tangential sliding, so
    sources that lie exactly on the surface converge to the exact alignment.
    """
    from scipy.spatial.transform import Rotation

    source_points = np.atleast_2d(np.asarray(source_points, dtype=np.float64))
    faces = mesh.faces if structure is None else mesh.structure_faces(structure)
    fa, fb, fc = (mesh.vertices[faces[:, i]] for i in range(3))
    normals = np.cross(fb - fa, fc - fa)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norms > 0, norms, 1.0)

    transform = init
    # One Procrustes step first knocks down gross misalignment.
    moved = transform.apply(source_points)
    closest, _, _ = _closest_with_faces(moved, mesh, structure)
    transform = procrustes(source_points, closest)
    for _ in range(iterations):
        moved = transform.apply(source_points)
        closest, dists, face_idx = _closest_with_faces(moved, mesh, structure)
        n = normals[face_idx]
        residual = np.einsum("ij,ij->i", moved - closest, n)
        a = np.hstack([np.cross(moved, n), n])
        x, *_ = np.linalg.lstsq(a, -residual, rcond=None)
        delta = RigidTransform(
            rotation=Rotation.from_rotvec(x[:3]).as_matrix(), translation=x[3:]
        )
        candidate = delta.compose(transform)
        new_d = point_to_mesh_distances(candidate.apply(source_points), mesh, structure)
        if new_d.mean() > dists.mean():
            break  # linearization stopped helping; keep the best transform
        transform = candidate
        if new_d.mean() < 1e-12:
            break
    return transform
