"""Synthetic four-chamber heart cohorts.

A procedural ellipsoid heart stands in for a clinical cohort: four closed
chambers plus an LV epicardial shell, perturbed into a PCA statistical shape
model, then animated by per-structure radial contraction with one cardiac
cycle per video.  Radial scaling makes chamber volumes scale exactly with the
cube of the contraction factor, so every generated video carries an analytic
ground-truth ejection fraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .geometry.mesh import CHAMBERS, MeshError, MeshVideo, SurfaceMesh

# Default chamber layout, mm: center, semi-axes.  All centers sit on the
# y=0 plane so the four-chamber long-axis view exists by construction, and
# structures are spaced to stay disjoint under the default perturbations.
ELLIPSOIDS: dict[str, tuple[tuple[float, float, float], tuple[float, float, float]]] = {
    "LV": ((0.0, 0.0, 0.0), (25.0, 25.0, 38.0)),
    "Myo": ((0.0, 0.0, 0.0), (33.0, 33.0, 46.0)),
    "RV": ((72.0, 0.0, -2.0), (30.0, 18.0, 36.0)),
    "LA": ((0.0, 0.0, 76.0), (22.0, 22.0, 22.0)),
    "RA": ((55.0, 0.0, 68.0), (20.0, 20.0, 20.0)),
}

# Structures sharing perturbation draws (the epicardial shell follows the LV).
PERTURBATION_GROUPS: tuple[tuple[str, ...], ...] = (("LV", "Myo"), ("RV",), ("LA",), ("RA",))


@lru_cache(maxsize=None)
def icosphere(subdivisions: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere (vertices, outward-oriented faces)."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
            (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
            (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
            (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        vlist = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            idx = midpoint.get(key)
            if idx is None:
                p = vlist[i] + vlist[j]
                p = p / np.linalg.norm(p)
                vlist.append(p)
                idx = len(vlist) - 1
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return verts, faces


def _assemble_heart(
    specs: Mapping[str, tuple[np.ndarray, np.ndarray]], detail: int
) -> SurfaceMesh:
    unit_v, unit_f = icosphere(detail)
    verts_parts: list[np.ndarray] = []
    faces_parts: list[np.ndarray] = []
    labels: dict[str, np.ndarray] = {}
    v_off = 0
    f_off = 0
    for name in ELLIPSOIDS:
        center, axes = specs[name]
        verts_parts.append(unit_v * np.asarray(axes) + np.asarray(center))
        faces_parts.append(unit_f + v_off)
        labels[name] = np.arange(f_off, f_off + len(unit_f), dtype=np.int64)
        v_off += len(unit_v)
        f_off += len(unit_f)
    return SurfaceMesh(np.vstack(verts_parts), np.vstack(faces_parts), labels)


def synth_base_heart(seed: int = 0, detail: int = 2) -> SurfaceMesh:
    """Four closed ellipsoidal chambers plus an LV shell; deterministic per seed."""
    if detail < 1:
        raise ValueError("detail level must be >= 1")
    rng = np.random.default_rng(seed)
    specs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for group in PERTURBATION_GROUPS:
        axis_jitter = 1.0 + rng.uniform(-0.03, 0.03, size=3)
        shift = rng.uniform(-1.0, 1.0, size=3)
        for name in group:
            center, axes = ELLIPSOIDS[name]
            specs[name] = (np.asarray(center) + shift, np.asarray(axes) * axis_jitter)
    return _assemble_heart(specs, detail)


def structure_vertex_ranges(mesh: SurfaceMesh) -> dict[str, np.ndarray]:
    """Vertex index sets per structure; structures must not share vertices."""
    ranges: dict[str, np.ndarray] = {}
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    for name in mesh.structure_names():
        idx = mesh.structure_vertex_indices(name)
        if seen[idx].any():
            raise MeshError(f"structure {name!r} shares vertices with another structure")
        seen[idx] = True
        ranges[name] = idx
    return ranges


class MeshShapeModel(BaseEstimator):
    """PCA statistical shape model over meshes with identical topology.

    Fitting stacks flattened vertex coordinates, keeps the top ``n_modes``
    eigenmodes of their covariance (orthonormal, variances non-increasing),
    and remembers the first mesh's topology as the template.
    """

    def __init__(self, n_modes: int = 8):
        self.n_modes = n_modes

    def fit(self, meshes: Sequence[SurfaceMesh], y=None) -> "MeshShapeModel":
        meshes = list(meshes)
        if len(meshes) < self.n_modes + 1:
            raise ValueError(
                f"need at least n_modes+1={self.n_modes + 1} meshes, got {len(meshes)}"
            )
        first = meshes[0]
        for i, m in enumerate(meshes[1:], start=1):
            if not first.same_topology(m):
                raise MeshError(f"cohort mesh {i} topology differs from mesh 0")
        x = np.stack([m.vertices.reshape(-1) for m in meshes])
        self.mean_vertices_ = x.mean(axis=0).reshape(-1, 3)
        centered = x - x.mean(axis=0)
        _, sv, vt = np.linalg.svd(centered, full_matrices=False)
        max_rank = min(len(meshes) - 1, x.shape[1])
        if self.n_modes > max_rank:
            raise ValueError(f"n_modes={self.n_modes} exceeds cohort rank bound {max_rank}")
        self.modes_ = vt[: self.n_modes]
        self.variances_ = sv[: self.n_modes] ** 2 / (len(meshes) - 1)
        self.faces_ = first.faces
        self.structure_labels_ = dict(first.structure_labels)
        return self

    def _template(self, vertices: np.ndarray) -> SurfaceMesh:
        return SurfaceMesh(vertices, self.faces_, self.structure_labels_, validate=False)

    def mean_mesh(self) -> SurfaceMesh:
        return self._template(self.mean_vertices_.copy())

    def sample(self, coefficients: Sequence[float]) -> SurfaceMesh:
        """Mean plus sum of ``c_k * sqrt(variance_k) * mode_k`` displacements."""
        c = np.asarray(coefficients, dtype=np.float64)
        if c.shape != (self.n_modes,):
            raise ValueError(f"expected {self.n_modes} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        disp = (c * np.sqrt(self.variances_)) @ self.modes_
        return self._template(self.mean_vertices_ + disp.reshape(-1, 3))

    def project(self, mesh: SurfaceMesh) -> np.ndarray:
        """Mode coefficients of a mesh (inverse of ``sample`` on the mode span)."""
        delta = (mesh.vertices - self.mean_vertices_).reshape(-1)
        raw = self.modes_ @ delta
        scale = np.sqrt(self.variances_)
        return np.divide(raw, scale, out=np.zeros_like(raw), where=scale > 0)


def perturbed_heart_cohort(
    base: SurfaceMesh, size: int, seed: int = 0
) -> list[SurfaceMesh]:
    """Smooth anatomical perturbations of a base heart for PCA fitting.

    Per member: coupled per-group axis scalings about each structure's
    centroid, small group translations, and a global scale.
    """
    rng = np.random.default_rng(seed)
    ranges = structure_vertex_ranges(base)
    center_all = base.vertices.mean(axis=0)
    cohort = []
    for _ in range(size):
        verts = base.vertices.copy()
        for group in PERTURBATION_GROUPS:
            scales = np.clip(rng.normal(1.0, 0.06, size=3), 0.85, 1.15)
            shift = np.clip(rng.normal(0.0, 1.0, size=3), -2.5, 2.5)
            for name in group:
                idx = ranges[name]
                centroid = base.vertices[idx].mean(axis=0)
                verts[idx] = centroid + (verts[idx] - centroid) * scales + shift
        global_scale = np.clip(rng.normal(1.0, 0.04), 0.9, 1.1)
        verts = center_all + (verts - center_all) * global_scale
        cohort.append(base.with_vertices(verts))
    return cohort


def default_shape_model(
    seed: int = 0, detail: int = 2, n_modes: int = 8, cohort_size: int = 40
) -> MeshShapeModel:
    base = synth_base_heart(seed=seed, detail=detail)
    cohort = perturbed_heart_cohort(base, cohort_size, seed=seed + 1)
    return MeshShapeModel(n_modes=n_modes).fit(cohort)


@dataclass(frozen=True)
class MotionModel:
    """Per-structure radial contraction amplitudes and phase offsets (radians)."""

    amplitudes: dict[str, float]
    phases: dict[str, float]

    def __post_init__(self):
        for name, a in self.amplitudes.items():
            if not 0.0 <= a <= 0.5:
                raise ValueError(f"amplitude for {name!r} must be in [0, 0.5], got {a}")

    def scale_factor(self, structure: str, t: float, n_frames: int) -> float:
        a = self.amplitudes.get(structure, 0.0)
        phase = self.phases.get(structure, 0.0)
        return 1.0 - a * (1.0 - np.cos(2.0 * np.pi * t / n_frames + phase)) / 2.0


def random_motion(rng: np.random.Generator) -> MotionModel:
    """Physiology-flavored draw: ventricles contract together, atria counter-phase."""
    a_lv = rng.uniform(0.08, 0.38)
    amplitudes = {
        "LV": a_lv,
        "Myo": 0.5 * a_lv,  # damped epicardial motion, so the wall thickens in systole
        "RV": rng.uniform(0.08, 0.30),
        "LA": rng.uniform(0.08, 0.25),
        "RA": rng.uniform(0.08, 0.25),
    }
    lv_phase = rng.uniform(-0.3, 0.3)
    phases = {
        "LV": lv_phase,
        "Myo": lv_phase,
        "RV": lv_phase + rng.uniform(-0.2, 0.2),
        "LA": np.pi + rng.uniform(-0.3, 0.3),
        "RA": np.pi + rng.uniform(-0.3, 0.3),
    }
    return MotionModel(amplitudes=amplitudes, phases=phases)


def motion_frame(
    base: SurfaceMesh, motion: MotionModel, t: float, n_frames: int
) -> SurfaceMesh:
    """Frame ``t`` of one cycle: each structure scaled radially about its centroid."""
    ranges = structure_vertex_ranges(base)
    verts = base.vertices.copy()
    for name, idx in ranges.items():
        f = motion.scale_factor(name, t, n_frames)
        if f <= 0:
            raise ValueError(f"motion amplitude makes {name!r} collapse (factor {f:.3f})")
        centroid = base.vertices[idx].mean(axis=0)
        verts[idx] = centroid + f * (base.vertices[idx] - centroid)
    return base.with_vertices(verts)


def analytic_ef(motion: MotionModel, structures: Sequence[str], n_frames: int) -> dict[str, float]:
    """Ground-truth EF per structure from the contraction factors (volume ~ factor^3)."""
    out: dict[str, float] = {}
    for name in structures:
        factors = np.array(
            [motion.scale_factor(name, t, n_frames) for t in range(n_frames)]
        )
        if (factors <= 0).any():
            raise ValueError(f"non-positive contraction factor for {name!r}")
        out[name] = float(1.0 - factors.min() ** 3 / factors.max() ** 3)
    return out


def generate_mesh_video(
    model: MeshShapeModel,
    coefficients: Sequence[float],
    motion: MotionModel,
    n_frames: int,
) -> tuple[MeshVideo, dict[str, float]]:
    """One cardiac cycle of a sampled shape plus its analytic per-chamber EF."""
    if n_frames < 2:
        raise ValueError("a training video needs at least 2 frames")
    base = model.sample(coefficients)
    frames = [motion_frame(base, motion, t, n_frames) for t in range(n_frames)]
    chambers = [c for c in CHAMBERS if c in base.structure_labels]
    return MeshVideo(frames), analytic_ef(motion, chambers, n_frames)


@dataclass(frozen=True)
class CohortSample:
    index: int
    coefficients: np.ndarray
    motion: MotionModel
    video: MeshVideo
    ef: dict[str, float] = field(default_factory=dict)


def generate_cohort(
    model: MeshShapeModel, count: int, n_frames: int = 16, seed: int = 0
) -> list[CohortSample]:
    """Deterministic cohort: truncated-normal shape coefficients, random motion."""
    if count < 1:
        raise ValueError("count must be >= 1")
    samples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        coeffs = np.clip(rng.standard_normal(model.n_modes), -3.0, 3.0)
        motion = random_motion(rng)
        video, ef = generate_mesh_video(model, coeffs, motion, n_frames)
        samples.append(
            CohortSample(index=i, coefficients=coeffs, motion=motion, video=video, ef=ef)
        )
    return samples
