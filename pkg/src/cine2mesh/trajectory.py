"""Compact latent representation of a periodic sequence.

A trajectory code is a circle of radius ``r`` and phase ``theta0`` in the
first two latent dimensions plus a static shape code; one video traces
exactly one revolution.  Codes cross the network boundary as flat vectors
``(r, cos theta0, sin theta0, static...)`` so the phase never wraps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrajectoryCode:
    """Circle radius, starting phase in [-pi, pi), and static shape code."""

    radius: float
    phase: float
    static: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "static", np.asarray(self.static, dtype=np.float64))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be finite and positive, got {self.radius}")
        if not np.isfinite(self.phase):
            raise ValueError("phase must be finite")
        if self.static.ndim != 1 or self.static.size < 1:
            raise ValueError("static code must be a non-empty vector")
        if not np.all(np.isfinite(self.static)):
            raise ValueError("static code must be finite")
        wrapped = float(np.arctan2(np.sin(self.phase), np.cos(self.phase)))
        object.__setattr__(self, "phase", wrapped)

    @property
    def dim(self) -> int:
        """Latent dimension d (circle takes the first two coordinates)."""
        return 2 + self.static.size

    def to_vector(self) -> np.ndarray:
        """Flat (d+1,) form: radius, cos/sin of the phase, static code."""
        return np.concatenate(
            [[self.radius, np.cos(self.phase), np.sin(self.phase)], self.static]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "TrajectoryCode":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 4:
            raise ValueError(f"code vector must be 1-D with >= 4 entries, got {vec.shape}")
        r = float(vec[0])
        phase = float(np.arctan2(vec[2], vec[1]))
        if r < 0:
            # A negative radius is the same circle with the phase advanced by pi.
            r, phase = -r, phase + np.pi
        return cls(radius=max(r, 1e-9), phase=phase, static=vec[3:])


def latent_point(code: TrajectoryCode, t: int, n_frames: int) -> np.ndarray:
    """Latent vector z_t on the circular trajectory; exactly periodic in t.

    The frame index is reduced modulo ``n_frames`` before any arithmetic, so
    ``z_{t+N}`` equals ``z_t`` bit for bit.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    t_eff = int(t) % int(n_frames)
    psi = 2.0 * np.pi * t_eff / n_frames + code.phase
    return np.concatenate(
        [[code.radius * np.cos(psi), code.radius * np.sin(psi)], code.static]
    )
