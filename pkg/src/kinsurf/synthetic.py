"""Deterministic synthetic oriented point clouds.

All shapes are sampled with analytic unit normals.  Tubes are canal
surfaces of constant radius around a closed-form centerline, except the
logarithmic spiral, which is the image of a meridional circle under a
rotation-plus-scaling flow (a spiral shell) and therefore an exact
kinematic surface of that flow.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .errors import InvalidSpec


class ShapeKind(str, enum.Enum):
    CYLINDER = "cylinder"
    CONE = "cone"
    SPHERE = "sphere"
    STRAIGHT_HELIX_TUBE = "straight-helix"
    LOG_SPIRAL_TUBE = "log-spiral"
    BENT_HELIX_TUBE = "bent-helix"
    CYLINDER_OUTLIER = "cylinder-outlier"


# Geometry defaults in shape units.  The spiral and bent helix values were
# picked so that the second-order fit degenerates to first order on the
# spiral and is clearly better than first order on the bent helix.
DEFAULTS = {
    ShapeKind.CYLINDER: dict(radius=1.0, height=4.0),
    ShapeKind.CONE: dict(half_angle=0.4, z_min=0.5, z_max=2.5),
    ShapeKind.SPHERE: dict(radius=1.0),
    ShapeKind.STRAIGHT_HELIX_TUBE: dict(helix_radius=1.0, pitch=1.2, turns=3.0, tube_radius=0.3),
    ShapeKind.LOG_SPIRAL_TUBE: dict(
        omega=1.0, growth=-0.08, start_radius=2.0, start_height=0.6, tube_radius=0.5, turns=2.5
    ),
    ShapeKind.BENT_HELIX_TUBE: dict(
        bend_radius=3.0, arc_angle=2.0, helix_radius=0.8, turns=4.0, tube_radius=0.25
    ),
    ShapeKind.CYLINDER_OUTLIER: dict(radius=0.3, height=2.0),
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: ShapeKind
    n_samples: int = 4000
    noise_sigma: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ShapeKind(self.kind))
        except ValueError as exc:
            raise InvalidSpec(f"unknown shape kind {self.kind!r}") from exc
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise InvalidSpec(f"unknown parameters for {self.kind.value}: {sorted(unknown)}")
        if self.n_samples < 100:
            raise InvalidSpec("n_samples must be >= 100")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")
        if not np.linalg.norm(self.axis) > 0:
            raise InvalidSpec("axis must be non-zero")

    def geometry(self) -> dict:
        g = dict(DEFAULTS[self.kind])
        g.update(self.params)
        for key in ("radius", "tube_radius"):
            if key in g and not g[key] > 0:
                raise InvalidSpec(f"{key} must be > 0")
        return g


def _rotation_to(axis) -> np.ndarray:
    """Rotation taking e_z onto ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, a)
    s = np.linalg.norm(v)
    c = z @ a
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * K @ K


def _cylinder(g, n, rng):
    th = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-g["height"] / 2, g["height"] / 2, n)
    nrm = np.column_stack([np.cos(th), np.sin(th), np.zeros(n)])
    pos = g["radius"] * nrm + np.column_stack([np.zeros(n), np.zeros(n), z])
    return pos, nrm


def _cone(g, n, rng):
    a = g["half_angle"]
    if not 0 < a < np.pi / 2:
        raise InvalidSpec("half_angle must be in (0, pi/2)")
    th = rng.uniform(0, 2 * np.pi, n)
    # area element grows with z; sample z accordingly
    z0, z1 = g["z_min"], g["z_max"]
    z = np.sqrt(rng.uniform(z0 * z0, z1 * z1, n))
    rad = z * np.tan(a)
    pos = np.column_stack([rad * np.cos(th), rad * np.sin(th), z])
    nrm = np.column_stack([np.cos(th) * np.cos(a), np.sin(th) * np.cos(a), -np.full(n, np.sin(a))])
    return pos, nrm


def _sphere(g, n, rng):
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return g["radius"] * nrm, nrm


def _tube(center, tangent, radius, n, rng):
    """Constant-radius canal surface around sampled centerline points."""
    tangent = tangent / np.linalg.norm(tangent, axis=1, keepdims=True)
    ref = np.where(np.abs(tangent[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    e1 = np.cross(tangent, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(tangent, e1)
    phi = rng.uniform(0, 2 * np.pi, n)
    nrm = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    return center + radius * nrm, nrm


def _straight_helix(g, n, rng):
    R, pitch = g["helix_radius"], g["pitch"]
    s = rng.uniform(0, 2 * np.pi * g["turns"], n)
    h = pitch / (2 * np.pi)
    c = np.column_stack([R * np.cos(s), R * np.sin(s), h * s - h * np.pi * g["turns"]])
    dc = np.column_stack([-R * np.sin(s), R * np.cos(s), np.full(n, h)])
    return _tube(c, dc, g["tube_radius"], n, rng)


def _bent_helix(g, n, rng):
    """Helix wound around a circular arc of radius ``bend_radius``."""
    Rb, Rh = g["bend_radius"], g["helix_radius"]
    arc = g["arc_angle"]
    total = Rb * arc
    w = 2 * np.pi * g["turns"] / total
    s = rng.uniform(0, total, n)
    a = s / Rb - arc / 2
    e1 = np.column_stack([np.cos(a), np.sin(a), np.zeros(n)])
    ta = np.column_stack([-np.sin(a), np.cos(a), np.zeros(n)])
    e2 = np.tile([0.0, 0.0, 1.0], (n, 1))
    cs, sn = np.cos(w * s), np.sin(w * s)
    c = Rb * e1 + Rh * (cs[:, None] * e1 + sn[:, None] * e2) - [Rb, 0.0, 0.0]
    dc = ta + Rh * (-w * sn[:, None] * e1 + w * cs[:, None] * e2 + cs[:, None] * ta / Rb)
    return _tube(c, dc, g["tube_radius"], n, rng)


def _log_spiral(g, n, rng):
    """Meridional circle swept by ``exp(growth u) Rot_z(omega u)``."""
    w, gam = g["omega"], g["growth"]
    R0, z0, rho = g["start_radius"], g["start_height"], g["tube_radius"]
    if rho >= R0:
        raise InvalidSpec("tube_radius must be smaller than start_radius")
    umax = 2 * np.pi * g["turns"] / w
    u = rng.uniform(0, umax, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    # generating circle in the x-z plane, centered at (R0, 0, z0)
    x = np.column_stack([R0 + rho * np.cos(phi), np.zeros(n), z0 + rho * np.sin(phi)])
    tau = np.column_stack([-np.sin(phi), np.zeros(n), np.cos(phi)])
    vel = np.cross([0.0, 0.0, w], x) + gam * x
    nrm = np.cross(tau, vel)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    radial = np.column_stack([np.cos(phi), np.zeros(n), np.sin(phi)])
    nrm *= np.sign(np.einsum("ij,ij->i", nrm, radial))[:, None]
    cu, su = np.cos(w * u), np.sin(w * u)
    scale = np.exp(gam * u)

    def rot(a):
        return np.column_stack([cu * a[:, 0] - su * a[:, 1], su * a[:, 0] + cu * a[:, 1], a[:, 2]])

    return scale[:, None] * rot(x), rot(nrm)


_GENERATORS = {
    ShapeKind.CYLINDER: _cylinder,
    ShapeKind.CYLINDER_OUTLIER: _cylinder,
    ShapeKind.CONE: _cone,
    ShapeKind.SPHERE: _sphere,
    ShapeKind.STRAIGHT_HELIX_TUBE: _straight_helix,
    ShapeKind.BENT_HELIX_TUBE: _bent_helix,
    ShapeKind.LOG_SPIRAL_TUBE: _log_spiral,
}


def generate(spec: ShapeSpec) -> PointCloud:
    """Sample ``spec``; identical specs give bit-identical clouds."""
    rng = np.random.default_rng(spec.seed)
    pos, nrm = _GENERATORS[spec.kind](spec.geometry(), spec.n_samples, rng)
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    if spec.noise_sigma > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        pos = pos + spec.noise_sigma * noise_rng.normal(size=len(pos))[:, None] * nrm
        nrm = nrm + spec.noise_sigma * noise_rng.normal(size=nrm.shape)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    R = _rotation_to(spec.axis)
    pos = pos @ R.T + np.asarray(spec.center, dtype=float)
    nrm = nrm @ R.T
    return PointCloud(pos, nrm, meta={"shape": spec.kind.value, "seed": spec.seed})


def merge_with_outlier(base: PointCloud, outlier: PointCloud) -> PointCloud:
    """Concatenate two clouds; ``labels`` marks the base points as inliers."""
    if len(base) == 0 or len(outlier) == 0:
        raise ValueError("both clouds must be non-empty")
    labels = np.concatenate([np.ones(len(base), bool), np.zeros(len(outlier), bool)])
    return PointCloud(
        np.vstack([base.positions, outlier.positions]),
        np.vstack([base.normals, outlier.normals]),
        labels=labels,
        meta={**base.meta, "outlier": outlier.meta.get("shape")},
    )
