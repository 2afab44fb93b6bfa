"""Rigid alignment: closed-form Procrustes and iterative closest point."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree


class DegenerateGeometryError(ValueError):
    """Point set is too degenerate (collinear or near-empty) to align."""


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3,3) and translation (3,)")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation is not orthonormal with determinant +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T, translation=-(self.rotation.T @ self.translation)
        )

    def deviation_from_identity(self) -> tuple[float, float]:
        """(Frobenius norm of R - I, norm of t); both ~0 for identity."""
        return (
            float(np.linalg.norm(self.rotation - np.eye(3))),
            float(np.linalg.norm(self.translation)),
        )


def _check_not_collinear(points: np.ndarray, label: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if len(s) < 2 or s[1] <= 1e-9 * max(s[0], 1e-12):
        raise DegenerateGeometryError(f"{label} points are collinear or degenerate")


def procrustes(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping paired source points onto target."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError("procrustes needs matching (n, 3) point sets")
    if len(source) < 3:
        raise DegenerateGeometryError("need at least 3 point pairs")
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    h = (source - cs).T @ (target - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rotation=r, translation=ct - r @ cs)


def _principal_axes(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return vt


def _initial_transforms(
    source: np.ndarray, target: np.ndarray, init: str | RigidTransform
) -> list[RigidTransform]:
    if isinstance(init, RigidTransform):
        return [init]
    if init == "identity":
        return [RigidTransform.identity()]
    if init != "centroid_axes":
        raise ValueError(f"unknown ICP init {init!r}")
    cs, ct = source.mean(axis=0), target.mean(axis=0)
    axes_s = _principal_axes(source)
    axes_t = _principal_axes(target)
    candidates = []
    # Principal axes have sign ambiguity; try the four proper-rotation sign choices.
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        r = axes_t.T @ (np.diag(signs) @ axes_s)
        if np.linalg.det(r) < 0:
            continue
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        if np.linalg.det(r) < 0:
            r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
        candidates.append(RigidTransform(rotation=r, translation=ct - r @ cs))
    return candidates or [RigidTransform(rotation=np.eye(3), translation=ct - cs)]


@dataclass
class IcpResult:
    transform: RigidTransform
    rms_history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rms_history)

    @property
    def final_rms(self) -> float:
        return self.rms_history[-1] if self.rms_history else float("inf")


def icp_align(
    source: np.ndarray,
    target: np.ndarray,
    max_iters: int = 50,
    tol: float = 1e-6,
    init: str | RigidTransform = "centroid_axes",
) -> IcpResult:
    """Point-to-point ICP aligning source onto target.

    Each iteration pairs every source point with its nearest target point and
    solves the orthogonal Procrustes problem for the pairs; paired RMS is
    non-increasing across iterations.  Stops when the RMS improves by less
    than ``tol`` (mm) or after ``max_iters``.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or source.shape[1] != 3 or len(source) < 3:
        raise ValueError("source must be (n>=3, 3)")
    if target.ndim != 2 or target.shape[1] != 3 or len(target) < 3:
        raise ValueError("target must be (n>=3, 3)")
    _check_not_collinear(source, "source")
    _check_not_collinear(target, "target")

    tree = cKDTree(target)

    def paired_rms(transform: RigidTransform) -> tuple[float, np.ndarray]:
        moved = transform.apply(source)
        dists, idx = tree.query(moved)
        return float(np.sqrt(np.mean(dists**2))), idx

    best: RigidTransform | None = None
    best_rms = np.inf
    for cand in _initial_transforms(source, target, init):
        rms, _ = paired_rms(cand)
        if rms < best_rms:
            best_rms, best = rms, cand
    transform = best
    result = IcpResult(transform=transform, rms_history=[best_rms])

    for _ in range(max_iters):
        _, idx = paired_rms(transform)
        transform = procrustes(source, target[idx])
        rms, _ = paired_rms(transform)
        result.rms_history.append(rms)
        if rms <= best_rms:
            best_rms = rms
            result.transform = transform
        if abs(result.rms_history[-2] - rms) < tol:
            result.converged = True
            break
    return result
