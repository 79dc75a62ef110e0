"""Oriented point clouds and the normalization applied before fitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class PointCloud:
    """Positions ``(n, 3)`` with unit normals ``(n, 3)``.

    ``labels`` optionally carries ground-truth inlier flags for synthetic
    fixtures; the fitters never look at it.
    """

    positions: np.ndarray
    normals: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.normals.shape:
            raise ValueError("positions and normals must have the same shape")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
            if len(self.labels) != len(self.positions):
                raise ValueError("one label per point required")

    def __len__(self):
        return len(self.positions)

    def bounds(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)


def unit_normals(normals) -> np.ndarray:
    normals = np.asarray(normals, dtype=float)
    return normals / np.linalg.norm(normals, axis=-1, keepdims=True)


@dataclass(frozen=True)
class NormalizationTransform:
    """``q = (p - centroid) / scale``; scale is in input units per normalized unit."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "centroid", np.array(self.centroid, dtype=float).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), 1.0)

    @classmethod
    def fit(cls, positions) -> "NormalizationTransform":
        """Centroid to the origin, RMS distance to the centroid equal to one."""
        positions = np.asarray(positions, dtype=float)
        centroid = positions.mean(axis=0)
        rms = np.sqrt(np.mean(np.sum((positions - centroid) ** 2, axis=1)))
        if not rms > 0:
            rms = 1.0
        return cls(centroid, rms)

    def apply(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.centroid) / self.scale

    def invert(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float) * self.scale + self.centroid

    def apply_cloud(self, cloud: PointCloud) -> PointCloud:
        return PointCloud(self.apply(cloud.positions), cloud.normals.copy(), cloud.labels, dict(cloud.meta))

    def to_dict(self) -> dict:
        return {"centroid": [float(x) for x in self.centroid], "scale": self.scale}

    @classmethod
    def from_dict(cls, d) -> "NormalizationTransform":
        return cls(d["centroid"], d["scale"])
