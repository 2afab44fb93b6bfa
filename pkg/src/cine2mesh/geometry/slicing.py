"""Plane cuts through labeled meshes and contour rasterization.

Contours come from triangle/plane intersection: each crossing face yields a
segment whose endpoints are computed once per mesh edge, so shared endpoints
match bit-exactly and segments chain into polylines without tolerance fudging.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mesh import STRUCTURES, SurfaceMesh

_ON_PLANE_EPS = 1e-12

# Canonical label ids for rasterized images.
LABEL_IDS = {name: i + 1 for i, name in enumerate(STRUCTURES)}


@dataclass(frozen=True)
class SlicePlane:
    """Oriented plane with an orthonormal in-plane basis (all in mm)."""

    origin: np.ndarray
    normal: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray

    @classmethod
    def from_normal(cls, origin: Sequence[float], normal: Sequence[float]) -> "SlicePlane":
        origin = np.asarray(origin, dtype=np.float64)
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise ValueError("plane normal has zero length")
        n = normal / norm
        seed = np.zeros(3)
        seed[np.argmin(np.abs(n))] = 1.0
        u = seed - n * (seed @ n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return cls(origin=origin, normal=n, basis_u=u, basis_v=v)

    def project(self, points: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(points) - self.origin
        return np.stack([rel @ self.basis_u, rel @ self.basis_v], axis=1)

    def lift(self, points2d: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points2d)
        return self.origin + np.outer(pts[:, 0], self.basis_u) + np.outer(pts[:, 1], self.basis_v)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.origin) @ self.normal


@dataclass(frozen=True)
class Contour:
    """One polyline in plane coordinates (mm)."""

    points: np.ndarray  # (k, 2)
    closed: bool

    def area(self) -> float:
        """Absolute shoelace area; open polylines are treated as implicitly closed."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def perimeter(self) -> float:
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


@dataclass
class ContourSet:
    """Per-structure polylines produced by one plane cut."""

    plane: SlicePlane
    contours: dict[str, list[Contour]] = field(default_factory=dict)

    def structures(self) -> tuple[str, ...]:
        return tuple(name for name, cs in self.contours.items() if cs)

    def is_empty(self) -> bool:
        return not any(self.contours.values())

    def points3d(self, structure: str | None = None) -> np.ndarray:
        names = [structure] if structure is not None else list(self.contours)
        chunks = [
            self.plane.lift(c.points)
            for name in names
            for c in self.contours.get(name, [])
        ]
        if not chunks:
            return np.empty((0, 3))
        return np.vstack(chunks)


def _chain_segments(
    segments: list[tuple[tuple, tuple]], coords: dict[tuple, np.ndarray]
) -> list[tuple[np.ndarray, bool]]:
    """Chain endpoint-keyed segments into polylines; returns (points2d, closed)."""
    links: dict[tuple, list[tuple]] = {}
    seg_set: set[frozenset] = set()
    for a, b in segments:
        if a == b:
            continue
        key = frozenset((a, b))
        if key in seg_set:
            continue
        seg_set.add(key)
        links.setdefault(a, []).append(b)
        links.setdefault(b, []).append(a)

    visited_edges: set[frozenset] = set()
    polylines: list[tuple[np.ndarray, bool]] = []

    def walk(start: tuple) -> list[tuple]:
        path = [start]
        current = start
        while True:
            nxt = None
            for cand in links[current]:
                e = frozenset((current, cand))
                if e not in visited_edges:
                    nxt = cand
                    visited_edges.add(e)
                    break
            if nxt is None:
                return path
            path.append(nxt)
            current = nxt
            if current == start:
                return path

    open_starts = sorted((k for k, v in links.items() if len(v) == 1), key=str)
    for start in open_starts:
        if all(frozenset((start, o)) in visited_edges for o in links[start]):
            continue
        path = walk(start)
        pts = np.array([coords[k] for k in path])
        polylines.append((pts, False))
    for start in sorted(links, key=str):
        if all(frozenset((start, o)) in visited_edges for o in links[start]):
            continue
        path = walk(start)
        closed = path[0] == path[-1] and len(path) > 3
        pts = np.array([coords[k] for k in (path[:-1] if closed else path)])
        polylines.append((pts, closed))
    return polylines


def slice_mesh(mesh: SurfaceMesh, plane: SlicePlane) -> ContourSet:
    """Intersect every labeled structure with the plane; chained polylines per structure."""
    dist = plane.signed_distance(mesh.vertices)
    dist = np.where(np.abs(dist) < _ON_PLANE_EPS, 0.0, dist)
    result = ContourSet(plane=plane)
    edge_points: dict[tuple[int, int], np.ndarray] = {}

    def edge_key(i: int, j: int):
        return ("e", min(i, j), max(i, j))

    def edge_point(i: int, j: int) -> np.ndarray:
        key = (min(i, j), max(i, j))
        pt = edge_points.get(key)
        if pt is None:
            a, b = key
            da, db = dist[a], dist[b]
            t = da / (da - db)
            pt = mesh.vertices[a] + t * (mesh.vertices[b] - mesh.vertices[a])
            edge_points[key] = pt
        return pt

    for name in mesh.structure_names():
        faces = mesh.structure_faces(name)
        if faces.size == 0:
            continue
        d = dist[faces]
        crossing = ~((d > 0).all(axis=1) | (d < 0).all(axis=1))
        segments: list[tuple[tuple, tuple]] = []
        coords: dict[tuple, np.ndarray] = {}

        def add_point(key, pt3d):
            if key not in coords:
                coords[key] = plane.project(pt3d[None, :])[0]

        for face, dface in zip(faces[crossing], d[crossing]):
            zero = dface == 0.0
            nz = int(zero.sum())
            if nz == 3:
                continue  # coplanar face contributes no unique segment
            keys = []
            if nz == 2:
                ia, ib = face[zero]
                keys = [("v", int(ia)), ("v", int(ib))]
                for k, vi in zip(keys, (ia, ib)):
                    add_point(k, mesh.vertices[vi])
            elif nz == 1:
                iv = int(face[zero][0])
                others = face[~zero]
                if dface[~zero].prod() > 0:
                    continue  # touches plane at a single vertex
                k1 = ("v", iv)
                add_point(k1, mesh.vertices[iv])
                i, j = int(others[0]), int(others[1])
                k2 = edge_key(i, j)
                add_point(k2, edge_point(i, j))
                keys = [k1, k2]
            else:
                hits = []
                for a, b in ((0, 1), (1, 2), (2, 0)):
                    if dface[a] * dface[b] < 0:
                        i, j = int(face[a]), int(face[b])
                        k = edge_key(i, j)
                        add_point(k, edge_point(i, j))
                        hits.append(k)
                if len(hits) != 2:
                    continue
                keys = hits
            if len(keys) == 2:
                segments.append((keys[0], keys[1]))

        if segments:
            result.contours[name] = [
                Contour(points=pts, closed=closed)
                for pts, closed in _chain_segments(segments, coords)
            ]
    return result


def rasterize(
    contour_set: ContourSet,
    size: int,
    mm_per_px: float,
    center: Sequence[float] = (0.0, 0.0),
) -> np.ndarray:
    """Label image from plane contours: innermost containing contour wins (even-odd).

    Pixel centers sit on a ``size`` x ``size`` grid spaced ``mm_per_px`` around
    ``center`` (plane coordinates).  Returns int labels per LABEL_IDS, 0 for
    background.
    """
    if size < 8:
        raise ValueError("grid size must be >= 8")
    cx, cy = center
    axis = (np.arange(size) - (size - 1) / 2.0) * mm_per_px
    px = axis + cx
    py = axis + cy
    gx, gy = np.meshgrid(px, py, indexing="xy")

    label = np.zeros((size, size), dtype=np.int64)
    best_area = np.full((size, size), np.inf)

    def inside_mask(points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        inside = np.zeros((size, size), dtype=bool)
        for xa, ya, xb, yb in zip(x, y, x2, y2):
            if ya == yb:
                continue
            crosses = (ya > gy) != (yb > gy)
            with np.errstate(invalid="ignore", divide="ignore"):
                xi = xa + (gy - ya) * (xb - xa) / (yb - ya)
            inside ^= crosses & (gx < xi)
        return inside

    order = sorted(
        contour_set.contours,
        key=lambda n: (LABEL_IDS.get(n, len(LABEL_IDS) + 1), n),
    )
    for name in order:
        lid = LABEL_IDS.get(name)
        if lid is None:
            raise ValueError(f"no label id for structure {name!r}")
        parity = np.zeros((size, size), dtype=bool)
        smallest = np.full((size, size), np.inf)
        for contour in contour_set.contours[name]:
            if len(contour.points) < 3:
                continue
            mask = inside_mask(contour.points)
            parity ^= mask
            area = contour.area()
            smallest = np.where(mask & (area < smallest), area, smallest)
        claim = parity & (smallest < best_area)
        label[claim] = lid
        best_area = np.where(claim, smallest, best_area)
    return label


# -- contour file format ------------------------------------------------------
#
# Structured text: plane vectors, then one `structure <name>` block per
# structure holding `contour closed|open <k>` point lists in plane mm.


def save_contours(contour_set: ContourSet, path: str | Path) -> None:
    path = Path(path)
    p = contour_set.plane
    lines = [
        "contours v1",
        "origin " + " ".join(f"{x:.9f}" for x in p.origin),
        "normal " + " ".join(f"{x:.9f}" for x in p.normal),
        "basis_u " + " ".join(f"{x:.9f}" for x in p.basis_u),
        "basis_v " + " ".join(f"{x:.9f}" for x in p.basis_v),
    ]
    for name in sorted(contour_set.contours):
        lines.append(f"structure {name}")
        for contour in contour_set.contours[name]:
            lines.append(f"contour {'closed' if contour.closed else 'open'} {len(contour.points)}")
            lines += [f"{x:.9f} {y:.9f}" for x, y in contour.points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_contours(path: str | Path) -> ContourSet:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "contours v1":
        raise ValueError(f"{path}: not a contour file")
    vectors: dict[str, np.ndarray] = {}
    i = 1
    for key in ("origin", "normal", "basis_u", "basis_v"):
        tag, *vals = lines[i].split()
        if tag != key:
            raise ValueError(f"{path}: expected {key!r} line, got {tag!r}")
        vectors[key] = np.array([float(v) for v in vals])
        i += 1
    plane = SlicePlane(
        origin=vectors["origin"],
        normal=vectors["normal"],
        basis_u=vectors["basis_u"],
        basis_v=vectors["basis_v"],
    )
    result = ContourSet(plane=plane)
    current: str | None = None
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("structure "):
            current = line.split(" ", 1)[1]
            result.contours[current] = []
        elif line.startswith("contour "):
            _, state, count = line.split()
            k = int(count)
            pts = np.array([[float(v) for v in lines[i + j].split()] for j in range(k)])
            i += k
            if current is None:
                raise ValueError(f"{path}: contour before any structure")
            result.contours[current].append(Contour(points=pts, closed=state == "closed"))
        else:
            raise ValueError(f"{path}: unrecognized line {line[:40]!r}")
    return result
