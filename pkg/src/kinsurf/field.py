"""Stationary velocity fields of first and second order.

A first-order field is ``v(p) = r x p + gamma p + c``; the second-order
field adds the quadratic term ``(t x p) x p``.  Everything here is pure and
works in whatever frame the parameters were fitted in (usually the
normalized frame, see :mod:`kinsurf.cloud`).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateField, InvalidCenter

#: residual below which a point counts as a zero of the field
EPS_CONV = 1e-8


class Order(enum.IntEnum):
    FIRST = 1
    SECOND = 2

    @property
    def dim(self) -> int:
        return 7 if self is Order.FIRST else 10


class PolylineKind(enum.IntEnum):
    STREAMLINE = 0
    AXIS = 1
    CORE_LINE = 2


def _vec3(x) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FieldParams:
    """Parameter set m = [t, r, c, gamma] (t is zero for first order)."""

    order: Order
    r: np.ndarray
    c: np.ndarray
    gamma: float
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "order", Order(self.order))
        object.__setattr__(self, "r", _vec3(self.r))
        object.__setattr__(self, "c", _vec3(self.c))
        object.__setattr__(self, "t", _vec3(self.t))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.order is Order.FIRST and np.any(self.t != 0):
            raise ValueError("first-order parameters must have t = 0")
        if not all(np.all(np.isfinite(a)) for a in (self.r, self.c, self.t)):
            raise ValueError("non-finite field parameters")

    @classmethod
    def first(cls, r, c, gamma) -> "FieldParams":
        return cls(Order.FIRST, r, c, gamma)

    @classmethod
    def second(cls, t, r, c, gamma) -> "FieldParams":
        return cls(Order.SECOND, r, c, gamma, t)

    @classmethod
    def from_flat(cls, m, order) -> "FieldParams":
        m = np.asarray(m, dtype=float)
        order = Order(order)
        if m.shape != (order.dim,):
            raise ValueError(f"expected {order.dim} parameters, got {m.shape}")
        if order is Order.FIRST:
            return cls(order, m[0:3], m[3:6], m[6])
        return cls(order, m[3:6], m[6:9], m[9], m[0:3])

    def flat(self) -> np.ndarray:
        parts = [self.r, self.c, [self.gamma]]
        if self.order is Order.SECOND:
            parts.insert(0, self.t)
        return np.concatenate(parts)

    def as_second(self) -> "FieldParams":
        return FieldParams(Order.SECOND, self.r, self.c, self.gamma, self.t)

    def scaled(self, s: float) -> "FieldParams":
        """Parameters describing the same field after the map p -> s p.

        Velocities scale by ``s`` as well, so ``v'(s p) = s v(p)``.
        """
        return FieldParams(self.order, self.r, self.c * s, self.gamma, self.t / s)


def skew(a) -> np.ndarray:
    """Matrix ``S`` with ``S @ x == np.cross(a, x)``."""
    x, y, z = a
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def eval_velocity(p, m: FieldParams) -> np.ndarray:
    """Velocity at one point (shape (3,)) or many points (shape (n, 3))."""
    p = np.asarray(p, dtype=float)
    v = np.cross(m.r, p) + m.gamma * p + m.c
    if m.order is Order.SECOND:
        # (t x p) x p = (t.p) p - (p.p) t
        tp = p @ m.t
        pp = np.einsum("...i,...i->...", p, p)
        v = v + tp[..., None] * p - pp[..., None] * m.t
    return v


def velocity_jacobian(p, m: FieldParams) -> np.ndarray:
    """dv/dp at ``p``; shape (3, 3) or (n, 3, 3)."""
    p = np.asarray(p, dtype=float)
    base = skew(m.r) + m.gamma * np.eye(3)
    if m.order is Order.FIRST or not np.any(m.t):
        return np.broadcast_to(base, p.shape[:-1] + (3, 3)).copy()
    t = m.t
    tp = p @ t
    quad = (
        np.einsum("...i,j->...ij", p, t)
        + tp[..., None, None] * np.eye(3)
        - 2.0 * np.einsum("i,...j->...ij", t, p)
    )
    return quad + base


def convergence_point_first_order(m: FieldParams, tol: float = 1e-12) -> np.ndarray:
    """Closed-form zero of a first-order field.

    Raises DegenerateField when gamma vanishes: the zeros then form a line
    (or do not exist) instead of an isolated point.
    """
    if m.order is not Order.FIRST:
        raise ValueError("closed-form convergence point needs a first-order field")
    r, c, g = m.r, m.c, m.gamma
    if abs(g) <= tol * max(1.0, np.linalg.norm(r), np.linalg.norm(c)):
        raise DegenerateField("gamma ~ 0: no isolated convergence point")
    return (g * np.cross(r, c) - g * g * c - (r @ c) * r) / (g * (r @ r + g * g))


def _default_seeds(m: FieldParams) -> np.ndarray:
    corners = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij")).reshape(3, -1).T
    return np.vstack([np.zeros(3), corners.astype(float)])


def convergence_point_second_order(
    m: FieldParams,
    seeds: Optional[Sequence] = None,
    eps: float = EPS_CONV,
    diagnostics: Optional[dict] = None,
) -> Optional[np.ndarray]:
    """Search a zero of the field by simplex minimization of ``|v(p)|``.

    Every seed starts a Nelder-Mead run; each result is polished with a few
    Newton steps on ``v(p) = 0``.  The best point with residual below
    ``eps`` is returned, otherwise None (the best residual seen is written
    to ``diagnostics['best_residual']`` when a dict is supplied).
    """
    if seeds is None:
        seeds = _default_seeds(m)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if len(seeds) == 0:
        raise ValueError("need at least one seed")

    def objective(p):
        return float(np.linalg.norm(eval_velocity(p, m)))

    best, best_res = None, np.inf
    for seed in seeds:
        res = minimize(
            objective,
            seed,
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000},
        )
        p = _newton_polish(res.x, m)
        r = objective(p)
        if r < best_res - 1e-14:
            best, best_res = p, r
    if diagnostics is not None:
        diagnostics["best_residual"] = best_res
        diagnostics["best_point"] = best
    if best_res < eps:
        return best
    return None


def _newton_polish(p, m: FieldParams, steps: int = 8) -> np.ndarray:
    p = np.array(p, dtype=float)
    for _ in range(steps):
        v = eval_velocity(p, m)
        try:
            dp = np.linalg.solve(velocity_jacobian(p, m), -v)
        except np.linalg.LinAlgError:
            break
        q = p + dp
        if not np.all(np.isfinite(q)):
            break
        if np.linalg.norm(eval_velocity(q, m)) >= np.linalg.norm(v):
            break
        p = q
    return p


def recenter_first_order(m: FieldParams, p0, tol: float = 1e-9) -> FieldParams:
    """Parameters of the same field expressed in ``q = p - p0``."""
    if m.order is not Order.FIRST:
        raise ValueError("recentering is only exact for first-order fields")
    p0 = np.asarray(p0, dtype=float)
    scale = max(1.0, np.linalg.norm(m.flat()) * (1.0 + np.linalg.norm(p0)))
    if np.linalg.norm(eval_velocity(p0, m)) > tol * scale:
        raise InvalidCenter("v(p0) is not zero")
    return FieldParams.first(m.r, np.zeros(3), m.gamma)


def centered_second_order_residual(m: FieldParams, p0, p) -> np.ndarray:
    """Difference between v(p) and the p0-centered quadratic expression.

    ``((t x q) + r) x q + gamma q`` with ``q = p - p0`` only reproduces the
    field when ``t = 0`` or ``p0 = 0``; this exposes how far off it is.
    """
    q = np.asarray(p, dtype=float) - np.asarray(p0, dtype=float)
    centered = np.cross(np.cross(m.t, q) + m.r, q) + m.gamma * q
    return eval_velocity(p, m) - centered


@dataclass
class Polyline:
    points: np.ndarray
    kind: PolylineKind = PolylineKind.STREAMLINE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.kind = PolylineKind(self.kind)
        if len(self.points) < 2:
            raise ValueError("a polyline needs at least two points")
        if not np.all(np.any(np.diff(self.points, axis=0) != 0, axis=1)):
            raise ValueError("consecutive polyline points must differ")

    def __len__(self):
        return len(self.points)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def streamline_integrate(
    m: FieldParams,
    seed,
    step: float = 1e-2,
    n_steps: int = 5000,
    bounds=None,
    eps: float = EPS_CONV,
) -> Polyline:
    """Trace ``dC/du = v(C)`` with fixed-step classical RK4.

    Integration stops early when the velocity drops below ``eps`` or the
    next point leaves ``bounds`` (a ``(lo, hi)`` pair); the reason is kept in
    ``meta['halt']``.
    """
    if step <= 0 or n_steps < 1:
        raise ValueError("step must be > 0 and n_steps >= 1")
    p = np.array(seed, dtype=float).reshape(3)
    lo = hi = None
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    pts = [p.copy()]
    halt = "steps"
    h = step
    for _ in range(n_steps):
        k1 = eval_velocity(p, m)
        if np.linalg.norm(k1) < eps:
            halt = "converged"
            break
        k2 = eval_velocity(p + 0.5 * h * k1, m)
        k3 = eval_velocity(p + 0.5 * h * k2, m)
        k4 = eval_velocity(p + h * k3, m)
        q = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(q)):
            halt = "diverged"
            break
        if lo is not None and (np.any(q < lo) or np.any(q > hi)):
            halt = "left_bounds"
            break
        p = q
        pts.append(p.copy())
    if len(pts) < 2:
        raise DegenerateField("the seed is a fixed point of the field")
    return Polyline(np.array(pts), PolylineKind.STREAMLINE, {"halt": halt, "step": step})


def _perp_frame(ez, q):
    """(e_x, e_y) completing ``ez`` using the part of ``q`` orthogonal to it."""
    qp = q - (q @ ez) * ez
    n = np.linalg.norm(qp)
    if n < 1e-14 * max(1.0, np.linalg.norm(q)):
        trial = np.eye(3)[int(np.argmin(np.abs(ez)))]
        qp = trial - (trial @ ez) * ez
        n = np.linalg.norm(qp)
    ex = qp / n
    return ex, np.cross(ez, ex)


def streamline_closed_form(m: FieldParams, seed, u: float) -> np.ndarray:
    """Point at parameter ``u`` on the first-order streamline through ``seed``.

    With ``gamma != 0`` this is the concho-spiral
    ``p0 + a exp(gamma u)(cos(w u) e_x + sin(w u) e_y + b e_z)``;
    with ``gamma == 0`` it degenerates into a screw motion about the axis.
    """
    if m.order is not Order.FIRST:
        raise ValueError("closed-form streamlines exist only for first-order fields")
    seed = np.asarray(seed, dtype=float)
    w = float(np.linalg.norm(m.r))
    g = m.gamma
    if w == 0.0 and g == 0.0:
        raise DegenerateField("r = 0 and gamma = 0: constant field")
    if w > 0:
        ez = m.r / w
    else:
        ez = np.array([0.0, 0.0, 1.0])

    if g != 0.0:
        center = convergence_point_first_order(m, tol=0.0)
        drift = np.zeros(3)
    else:
        # screw motion: axis point a0 with r x a0 = -c_perp, drift along r
        center = np.cross(m.r, m.c) / (w * w)
        drift = (m.c @ ez) * ez * u
    q = seed - center
    ex, ey = _perp_frame(ez, q)
    a = q @ ex
    b_ax = q @ ez
    scale = np.exp(g * u)
    ang = w * u
    return center + drift + scale * (a * (np.cos(ang) * ex + np.sin(ang) * ey) + b_ax * ez)


def symmetry_axis_first_order(m: FieldParams, tol: float = 1e-12):
    """Axis ``(p0, r_hat)`` of a first-order field with isolated center."""
    if m.order is not Order.FIRST:
        raise ValueError("straight symmetry axis needs a first-order field")
    w = np.linalg.norm(m.r)
    if w <= tol * max(1.0, np.linalg.norm(m.flat())):
        raise DegenerateField("r ~ 0: no rotation axis")
    return convergence_point_first_order(m), m.r / w


def axis_of_rotation(m: FieldParams, tol: float = 1e-12):
    """Point and direction of the rotation axis, also for ``gamma ~ 0``.

    For ``gamma != 0`` this is :func:`symmetry_axis_first_order`.  Otherwise
    the axis is the line where ``r x p + c`` is parallel to ``r``; if ``r``
    vanishes too, the field is a pure translation along ``c``.
    """
    if m.order is not Order.FIRST:
        raise ValueError("needs a first-order field")
    scale = max(1.0, np.linalg.norm(m.flat()))
    w = np.linalg.norm(m.r)
    if w <= tol * scale:
        cn = np.linalg.norm(m.c)
        if cn <= tol * scale:
            raise DegenerateField("zero field")
        return np.zeros(3), m.c / cn
    if abs(m.gamma) > 1e-9 * scale:
        return symmetry_axis_first_order(m, tol)
    return np.cross(m.r, m.c) / (w * w), m.r / w
