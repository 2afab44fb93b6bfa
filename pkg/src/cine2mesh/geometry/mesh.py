"""Labeled triangle surface meshes: validation, adjacency, volumes, EF.

A mesh carries per-structure face labels for the four chambers (LV, RV, LA,
RA) and the LV epicardial shell (Myo).  Chamber sub-surfaces must be closed
and consistently oriented; volumes come from the divergence theorem over
signed tetrahedra.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

STRUCTURES = ("LV", "RV", "LA", "RA", "Myo")
CHAMBERS = ("LV", "RV", "LA", "RA")

MM3_PER_ML = 1000.0


class MeshError(ValueError):
    """Invalid mesh topology or labeling."""


def _directed_edges(faces: np.ndarray) -> np.ndarray:
    return faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)


def _boundary_edge_count(faces: np.ndarray) -> int:
    edges = np.sort(_directed_edges(faces), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int((counts == 1).sum())


class SurfaceMesh:
    """Triangle mesh with vertices in mm and named face-label subsets."""

    __slots__ = ("vertices", "faces", "structure_labels")

    def __init__(
        self,
        vertices: np.ndarray,
        faces: np.ndarray,
        structure_labels: Mapping[str, np.ndarray],
        validate: bool = True,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.structure_labels = {
            name: np.ascontiguousarray(idx, dtype=np.int64)
            for name, idx in structure_labels.items()
        }
        if validate:
            self._validate()

    def _validate(self) -> None:
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {self.faces.shape}")
        n = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise MeshError("face index out of range")
        degenerate = (
            (self.faces[:, 0] == self.faces[:, 1])
            | (self.faces[:, 1] == self.faces[:, 2])
            | (self.faces[:, 2] == self.faces[:, 0])
        )
        if degenerate.any():
            raise MeshError(f"{int(degenerate.sum())} degenerate faces (repeated vertex)")
        m = len(self.faces)
        for name, idx in self.structure_labels.items():
            if idx.size and (idx.min() < 0 or idx.max() >= m):
                raise MeshError(f"label {name!r} references face out of range")
        for name in CHAMBERS:
            if name not in self.structure_labels:
                continue
            sub = self.faces[self.structure_labels[name]]
            if sub.size == 0:
                continue
            boundary = _boundary_edge_count(sub)
            if boundary:
                raise MeshError(
                    f"chamber {name!r} sub-surface is not closed ({boundary} boundary edges)"
                )
            directed = _directed_edges(sub)
            if len(np.unique(directed, axis=0)) != len(directed):
                raise MeshError(f"chamber {name!r} sub-surface is not consistently oriented")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def structure_names(self) -> tuple[str, ...]:
        return tuple(self.structure_labels)

    def structure_faces(self, structure: str) -> np.ndarray:
        if structure not in self.structure_labels:
            raise KeyError(f"unknown structure {structure!r}; have {sorted(self.structure_labels)}")
        return self.faces[self.structure_labels[structure]]

    def structure_vertex_indices(self, structure: str) -> np.ndarray:
        return np.unique(self.structure_faces(structure))

    def with_vertices(self, vertices: np.ndarray) -> "SurfaceMesh":
        """Same topology and labels with new vertex positions (not revalidated)."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise MeshError(
                f"vertex array shape {vertices.shape} does not match {self.vertices.shape}"
            )
        return SurfaceMesh(vertices, self.faces, self.structure_labels, validate=False)

    def translated(self, offset: Sequence[float]) -> "SurfaceMesh":
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=np.float64))

    def same_topology(self, other: "SurfaceMesh") -> bool:
        if self.vertices.shape != other.vertices.shape:
            return False
        if not np.array_equal(self.faces, other.faces):
            return False
        if set(self.structure_labels) != set(other.structure_labels):
            return False
        return all(
            np.array_equal(self.structure_labels[k], other.structure_labels[k])
            for k in self.structure_labels
        )


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected vertex adjacency of a mesh, optionally with GCN weights."""

    n_vertices: int
    neighbors: tuple[tuple[int, ...], ...]
    weights: sparse.csr_matrix | None = None

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])


def adjacency(mesh: SurfaceMesh, normalized: bool = False) -> AdjacencyGraph:
    """Unique-edge adjacency; with ``normalized`` also D^-1/2 (A+I) D^-1/2."""
    edges = np.sort(_directed_edges(mesh.faces), axis=1)
    edges = np.unique(edges, axis=0)
    n = mesh.n_vertices
    neighbor_lists: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        neighbor_lists[i].append(int(j))
        neighbor_lists[j].append(int(i))
    neighbors = tuple(tuple(sorted(ns)) for ns in neighbor_lists)
    weights = None
    if normalized:
        rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
        cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
        vals = np.ones(len(rows))
        a_plus_i = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        deg = np.asarray(a_plus_i.sum(axis=1)).ravel()
        d_inv_sqrt = sparse.diags(1.0 / np.sqrt(deg))
        weights = (d_inv_sqrt @ a_plus_i @ d_inv_sqrt).tocsr()
    return AdjacencyGraph(n_vertices=n, neighbors=neighbors, weights=weights)


def enclosed_volume(mesh: SurfaceMesh, structure: str) -> float:
    """Volume in mL enclosed by a closed labeled sub-surface."""
    faces = mesh.structure_faces(structure)
    if faces.size == 0:
        raise MeshError(f"structure {structure!r} has no faces")
    boundary = _boundary_edge_count(faces)
    if boundary:
        raise MeshError(
            f"structure {structure!r} is not closed ({boundary} boundary edges); volume undefined"
        )
    # Center first so the signed-tetrahedron sum is numerically translation invariant.
    verts = mesh.vertices - mesh.vertices[np.unique(faces)].mean(axis=0)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    signed = np.einsum("ij,ij->i", np.cross(a, b), c).sum() / 6.0
    return abs(signed) / MM3_PER_ML


class MeshVideo:
    """Frame sequence of surface meshes sharing one topology."""

    __slots__ = ("frames",)

    def __init__(self, frames: Sequence[SurfaceMesh]):
        frames = tuple(frames)
        if not frames:
            raise MeshError("a mesh video needs at least one frame")
        first = frames[0]
        for t, frame in enumerate(frames[1:], start=1):
            if not first.same_topology(frame):
                raise MeshError(f"frame {t} topology differs from frame 0")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, t: int) -> SurfaceMesh:
        return self.frames[t]

    def vertex_array(self) -> np.ndarray:
        """Stacked vertex positions, shape (n_frames, n_vertices, 3)."""
        return np.stack([f.vertices for f in self.frames])


def volume_curve(video: MeshVideo, structure: str) -> np.ndarray:
    """Per-frame enclosed volume (mL) of one structure."""
    return np.array([enclosed_volume(f, structure) for f in video.frames])


def ejection_fraction(curve: Sequence[float]) -> tuple[float, int, int]:
    """EF = (EDV - ESV) / EDV with ED/ES as earliest max/min volume frames."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty volume curve")
    if (curve <= 0).any():
        raise ValueError("volume curve contains non-positive volumes")
    ed = int(np.argmax(curve))
    es = int(np.argmin(curve))
    ef = (curve[ed] - curve[es]) / curve[ed]
    return float(ef), ed, es


# -- mesh file format ---------------------------------------------------------
#
# ASCII: `v x y z` lines (mm) then `f i j k` lines (1-based indices), with a
# sidecar `.structures` file mapping structure names to half-open face ranges
# (`name start end`, 0-based).  Face order is grouped by structure on save.


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".structures")


def _grouped_face_order(mesh: SurfaceMesh) -> tuple[np.ndarray, list[tuple[str, int, int]]]:
    order: list[np.ndarray] = []
    ranges: list[tuple[str, int, int]] = []
    claimed = np.zeros(mesh.n_faces, dtype=bool)
    start = 0
    for name in sorted(mesh.structure_labels):
        idx = mesh.structure_labels[name]
        if claimed[idx].any():
            raise MeshError("structure labels overlap; cannot serialize as face ranges")
        claimed[idx] = True
        order.append(idx)
        ranges.append((name, start, start + len(idx)))
        start += len(idx)
    rest = np.nonzero(~claimed)[0]
    if rest.size:
        order.append(rest)
    return np.concatenate(order) if order else np.arange(0), ranges


def save_mesh(mesh: SurfaceMesh, path: str | Path) -> None:
    path = Path(path)
    perm, ranges = _grouped_face_order(mesh)
    faces = mesh.faces[perm]
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    side = [f"{name} {a} {b}" for name, a, b in ranges]
    _sidecar_path(path).write_text("\n".join(side) + "\n", encoding="utf-8")


def load_mesh(path: str | Path, sidecar: str | Path | None = None) -> SurfaceMesh:
    path = Path(path)
    v_chunks: list[str] = []
    f_chunks: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("v "):
            v_chunks.append(line[2:])
        elif line.startswith("f "):
            f_chunks.append(line[2:])
        elif line.strip():
            raise MeshError(f"{path}: unrecognized line {line[:40]!r}")
    vertices = np.array(" ".join(v_chunks).split(), dtype=np.float64).reshape(-1, 3)
    faces = np.array(" ".join(f_chunks).split(), dtype=np.int64).reshape(-1, 3) - 1
    side_path = Path(sidecar) if sidecar is not None else _sidecar_path(path)
    labels: dict[str, np.ndarray] = {}
    if side_path.exists():
        for line in side_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            name, a, b = line.split()
            labels[name] = np.arange(int(a), int(b), dtype=np.int64)
    return SurfaceMesh(vertices, faces, labels)
