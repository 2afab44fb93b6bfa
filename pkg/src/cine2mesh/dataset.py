"""Synthetic multi-view cine rendering and unpaired training pools.

Mesh videos are cut by one four-chamber long-axis plane and three short-axis
planes, rasterized to label images, mapped to fixed intensities, and
corrupted with seeded Gaussian noise.  Training pools are deliberately
unpaired: images come from one half of the cohort, meshes from the other;
validation and test samples keep their pairing for evaluation only.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .geometry.mesh import MeshVideo, SurfaceMesh
from .geometry.slicing import SlicePlane, rasterize, slice_mesh

VIEW_NAMES = ("lax", "sax_apical", "sax_mid", "sax_basal")
SAX_FRACTIONS = (0.25, 0.5, 0.75)

BLOOD_INTENSITY = 1.0
MYO_INTENSITY = 0.6
# Rasterized label -> pixel intensity (blood pools bright, myocardium dimmer).
INTENSITY_BY_STRUCTURE = {
    "LV": BLOOD_INTENSITY,
    "RV": BLOOD_INTENSITY,
    "LA": BLOOD_INTENSITY,
    "RA": BLOOD_INTENSITY,
    "Myo": MYO_INTENSITY,
}


class DatasetError(ValueError):
    """Invalid rendering or pool configuration."""


@dataclass
class CineSequence:
    """Multi-view frame stacks over one cardiac cycle.

    ``lax`` is ``(N, H, W)``; ``sax`` is ``(N, 3, H, W)`` ordered apical,
    mid, basal.  ``ef`` carries the synthetic ground truth when known.
    """

    lax: np.ndarray
    sax: np.ndarray
    pixel_spacing: float
    ef: dict[str, float] | None = None

    def __post_init__(self):
        self.lax = np.asarray(self.lax, dtype=np.float64)
        self.sax = np.asarray(self.sax, dtype=np.float64)
        if self.lax.ndim != 3 or self.sax.ndim != 4 or self.sax.shape[1] != 3:
            raise DatasetError(
                f"expected lax (N,H,W) and sax (N,3,H,W), got {self.lax.shape} / {self.sax.shape}"
            )
        if self.lax.shape[0] != self.sax.shape[0] or self.lax.shape[1:] != self.sax.shape[2:]:
            raise DatasetError("lax and sax disagree on frame count or image size")
        if self.lax.shape[1] != self.lax.shape[2]:
            raise DatasetError("images must be square")

    @property
    def n_frames(self) -> int:
        return int(self.lax.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.lax.shape[1])

    def stack(self) -> np.ndarray:
        """All views as ``(N, 4, H, W)`` in VIEW_NAMES order."""
        return np.concatenate([self.lax[:, None], self.sax], axis=1)

    @classmethod
    def from_stack(
        cls, stack: np.ndarray, pixel_spacing: float, ef: dict[str, float] | None = None
    ) -> "CineSequence":
        return cls(lax=stack[:, 0], sax=stack[:, 1:], pixel_spacing=pixel_spacing, ef=ef)


def long_axis_direction(mesh: SurfaceMesh) -> np.ndarray:
    """LV long axis (largest-extent principal direction), pointing toward the atria."""
    lv = mesh.vertices[mesh.structure_vertex_indices("LV")]
    centered = lv - lv.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    atria = []
    for name in ("LA", "RA"):
        if name in mesh.structure_labels:
            atria.append(mesh.vertices[mesh.structure_vertex_indices(name)].mean(axis=0))
    if atria:
        toward = np.mean(atria, axis=0) - lv.mean(axis=0)
        if toward @ axis < 0:
            axis = -axis
    return axis


def imaging_planes(
    mesh: SurfaceMesh, sax_fractions: Sequence[float] = SAX_FRACTIONS
) -> dict[str, SlicePlane]:
    """Four-chamber LAX plane plus SAX planes at fractions of the LV long axis.

    The LAX plane contains the LV long axis and aims at the atria centroids;
    SAX planes are orthogonal to the long axis at apical/mid/basal fractions
    of the LV extent.
    """
    axis = long_axis_direction(mesh)
    lv = mesh.vertices[mesh.structure_vertex_indices("LV")]
    lv_center = lv.mean(axis=0)
    atria = []
    for name in ("LA", "RA"):
        if name in mesh.structure_labels:
            atria.append(mesh.vertices[mesh.structure_vertex_indices(name)].mean(axis=0))
    if atria:
        aim = np.mean(atria, axis=0) - lv_center
    else:
        aim = np.array([1.0, 0.0, 0.0])
    lax_normal = np.cross(axis, aim)
    if np.linalg.norm(lax_normal) < 1e-9:
        raise DatasetError("cannot orient the long-axis plane (atria on the long axis)")
    planes = {"lax": SlicePlane.from_normal(lv_center, lax_normal)}
    heights = lv @ axis
    lo, hi = heights.min(), heights.max()
    for name, frac in zip(VIEW_NAMES[1:], sax_fractions):
        origin = lv_center + (lo + frac * (hi - lo) - lv_center @ axis) * axis
        planes[name] = SlicePlane.from_normal(origin, axis)
    return planes


def render_frame(
    mesh: SurfaceMesh,
    plane: SlicePlane,
    image_size: int,
    mm_per_px: float,
    center: tuple[float, float],
) -> np.ndarray:
    """Intensity image of one plane cut (no noise)."""
    labels = rasterize(slice_mesh(mesh, plane), image_size, mm_per_px, center)
    img = np.zeros_like(labels, dtype=np.float64)
    from .geometry.slicing import LABEL_IDS

    for name, lid in LABEL_IDS.items():
        intensity = INTENSITY_BY_STRUCTURE.get(name)
        if intensity is not None:
            img[labels == lid] = intensity
    return img


def render_cine(
    video: MeshVideo,
    image_size: int = 64,
    fov_mm: float = 160.0,
    noise_sigma: float = 0.05,
    blur_sigma: float = 0.0,
    seed: int = 0,
    ef: dict[str, float] | None = None,
) -> CineSequence:
    """Render a mesh video into a multi-view cine sequence; seeded and deterministic.

    Planes are fixed from frame 0.  Every plane must intersect the mesh at
    every frame; per-plane grid centers come from the frame-0 contour bounds.
    """
    planes = imaging_planes(video[0])
    mm_per_px = fov_mm / image_size
    centers: dict[str, tuple[float, float]] = {}
    for name, plane in planes.items():
        cut = slice_mesh(video[0], plane)
        if cut.is_empty():
            raise DatasetError(f"plane {name!r} misses the mesh at frame 0")
        pts = plane.project(cut.points3d())
        centers[name] = (
            float((pts[:, 0].min() + pts[:, 0].max()) / 2.0),
            float((pts[:, 1].min() + pts[:, 1].max()) / 2.0),
        )

    rng = np.random.default_rng(seed)
    frames = np.zeros((video.n_frames, len(VIEW_NAMES), image_size, image_size))
    for t, mesh in enumerate(video):
        for vi, name in enumerate(VIEW_NAMES):
            cut = slice_mesh(mesh, planes[name])
            if cut.is_empty():
                raise DatasetError(f"plane {name!r} misses the mesh at frame {t}")
            img = render_frame(mesh, planes[name], image_size, mm_per_px, centers[name])
            if blur_sigma > 0:
                img = ndimage.gaussian_filter(img, sigma=blur_sigma)
            frames[t, vi] = img
    if noise_sigma > 0:
        frames = frames + rng.normal(0.0, noise_sigma, size=frames.shape)
    return CineSequence.from_stack(frames, pixel_spacing=mm_per_px, ef=ef)


def normalization_stats(frames: np.ndarray) -> tuple[float, float]:
    """Whole-stack mean and standard deviation."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.size == 0:
        raise DatasetError("cannot normalize an empty stack")
    return float(arr.mean()), float(arr.std())


def zscore_normalize(frames: np.ndarray) -> np.ndarray:
    """(x - mean) / max(std, 1e-8) over the whole stack."""
    arr = np.asarray(frames, dtype=np.float64)
    mean, std = normalization_stats(arr)
    return (arr - mean) / max(std, 1e-8)


# -- image container ----------------------------------------------------------
#
# Flat binary: magic CDIM, version u32, dims (frames, views, H, W) as u32,
# then little-endian float32, row major.

CDIM_MAGIC = b"CDIM"
CDIM_VERSION = 1


def save_cine(cine: CineSequence, path: str | Path) -> None:
    path = Path(path)
    stack = cine.stack().astype("<f4")
    n, v, h, w = stack.shape
    with open(path, "wb") as fh:
        fh.write(CDIM_MAGIC)
        fh.write(struct.pack("<5I", CDIM_VERSION, n, v, h, w))
        fh.write(stack.tobytes())


def load_cine(
    path: str | Path, pixel_spacing: float, ef: dict[str, float] | None = None
) -> CineSequence:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CDIM_MAGIC:
            raise DatasetError(f"{path}: bad magic {magic!r}")
        version, n, v, h, w = struct.unpack("<5I", fh.read(20))
        if version != CDIM_VERSION:
            raise DatasetError(f"{path}: unsupported version {version}")
        if v != len(VIEW_NAMES):
            raise DatasetError(f"{path}: expected {len(VIEW_NAMES)} views, found {v}")
        raw = fh.read(n * v * h * w * 4)
        stack = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n, v, h, w)
    return CineSequence.from_stack(stack, pixel_spacing=pixel_spacing, ef=ef)


# -- unpaired pools -----------------------------------------------------------


@dataclass(frozen=True)
class PoolSplit:
    """Cohort indices per role; training images and meshes are disjoint subjects."""

    image_subjects: tuple[int, ...]
    mesh_subjects: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def all_indices(self) -> tuple[int, ...]:
        return self.image_subjects + self.mesh_subjects + self.validation + self.test


def make_unpaired_pools(
    n_subjects: int,
    n_train: int,
    n_validation: int,
    n_test: int,
    seed: int = 0,
) -> PoolSplit:
    """Shuffle subjects into unpaired train halves plus paired val/test splits."""
    if n_subjects < 4:
        raise DatasetError("cohort too small to split (need >= 4 subjects)")
    if n_train + n_validation + n_test != n_subjects:
        raise DatasetError(
            f"split {n_train}+{n_validation}+{n_test} != cohort size {n_subjects}"
        )
    if n_train < 2:
        raise DatasetError("need at least 2 training subjects to unpair")
    order = np.random.default_rng(seed).permutation(n_subjects)
    train = order[:n_train]
    half = n_train // 2
    return PoolSplit(
        image_subjects=tuple(int(i) for i in train[:half]),
        mesh_subjects=tuple(int(i) for i in train[half:]),
        validation=tuple(int(i) for i in order[n_train : n_train + n_validation]),
        test=tuple(int(i) for i in order[n_train + n_validation :]),
    )
