"""Feature extraction from fitted fields.

Core lines are located with the parallel-vectors operator: on every
triangulated face of a regular grid the velocity ``v`` and a second field
``w`` (acceleration ``J v`` or the jerk ``(grad a) v``) are interpolated
linearly and the points where ``v x w = 0`` are found from a 3x3
eigenproblem in barycentric coordinates.  Points are then polished on the
exact fields, linked through the grid cells and filtered.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateField, NotACriticalPoint
from .field import EPS_CONV, FieldParams, Order, Polyline, PolylineKind, eval_velocity, velocity_jacobian


class ParallelMode(str, enum.Enum):
    FIRST_ORDER = "acceleration"  # v || J v
    HIGHER_ORDER = "jerk"  # v || (grad a) v, zero streamline torsion


class CriticalClass(str, enum.Enum):
    SOURCE = "source"
    SINK = "sink"
    SPIRAL_SOURCE = "spiral-source"
    SPIRAL_SINK = "spiral-sink"
    SADDLE = "saddle"
    SPIRAL_SADDLE = "spiral-saddle"
    DEGENERATE = "degenerate"


@dataclass
class CriticalPointInfo:
    position: np.ndarray
    eigenvalues: np.ndarray
    kind: CriticalClass


def classify_critical_point(p0, m: FieldParams, eps: float = EPS_CONV, zero_tol: float = 1e-9) -> CriticalPointInfo:
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(eval_velocity(p0, m)) >= eps:
        raise NotACriticalPoint("velocity does not vanish at the point")
    ev = np.linalg.eigvals(velocity_jacobian(p0, m))
    ev = ev[np.lexsort((ev.imag, ev.real))]
    re = ev.real
    spiral = bool(np.any(np.abs(ev.imag) > zero_tol))
    if np.any(np.abs(re) < zero_tol):
        kind = CriticalClass.DEGENERATE
    elif np.all(re < 0):
        kind = CriticalClass.SPIRAL_SINK if spiral else CriticalClass.SINK
    elif np.all(re > 0):
        kind = CriticalClass.SPIRAL_SOURCE if spiral else CriticalClass.SOURCE
    else:
        kind = CriticalClass.SPIRAL_SADDLE if spiral else CriticalClass.SADDLE
    return CriticalPointInfo(p0, ev, kind)


def acceleration(p, m: FieldParams) -> np.ndarray:
    """``a = J v``, the derivative of the velocity along the flow."""
    v = eval_velocity(p, m)
    return np.einsum("...ij,...j->...i", velocity_jacobian(p, m), v)


def jerk(p, m: FieldParams) -> np.ndarray:
    """Derivative of the acceleration along the flow, ``(grad a) v``.

    For the quadratic field ``grad a . v = J^2 v + 2 (t.v) v - 2 |v|^2 t``;
    the last two terms come from the constant second derivative of ``v``.
    """
    v = eval_velocity(p, m)
    J = velocity_jacobian(p, m)
    b = np.einsum("...ij,...j->...i", J, np.einsum("...ij,...j->...i", J, v))
    if m.order is Order.SECOND:
        tv = v @ m.t
        vv = np.einsum("...i,...i->...", v, v)
        b = b + 2.0 * tv[..., None] * v - 2.0 * vv[..., None] * m.t
    return b


def swirl_strength(p, m: FieldParams) -> np.ndarray:
    """Largest imaginary part among the Jacobian eigenvalues."""
    ev = np.linalg.eigvals(velocity_jacobian(p, m))
    return np.abs(ev.imag).max(axis=-1)


def projection_metric(m: FieldParams, tol: float = 1e-12) -> float:
    """Signed length of the projection of ``t`` on ``r``: ``t.r / |r|``."""
    if m.order is not Order.SECOND:
        raise ValueError("the projection metric needs a second-order field")
    nr = np.linalg.norm(m.r)
    if nr <= tol:
        raise DegenerateField("r ~ 0")
    return float(m.t @ m.r / nr)


# -- core lines -----------------------------------------------------------

@dataclass(frozen=True)
class CoreLineConfig:
    bounds: tuple  # (lo, hi), each a 3-vector, in the field's frame
    grid_resolution: int = 64
    strength_threshold: float = 1e-3
    min_length: float = 0.0
    mode: ParallelMode = ParallelMode.HIGHER_ORDER
    refine: bool = True
    residual_tolerance: float = 1e-4  # after refinement, on the exact fields

    def __post_init__(self):
        object.__setattr__(self, "mode", ParallelMode(self.mode))
        lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in self.bounds)
        object.__setattr__(self, "bounds", (tuple(lo), tuple(hi)))
        if self.grid_resolution < 8:
            raise ValueError("grid_resolution must be >= 8")
        if self.strength_threshold < 0 or self.min_length < 0:
            raise ValueError("thresholds must be >= 0")
        if np.any(hi <= lo):
            raise ValueError("empty bounds")

    def spacing(self) -> np.ndarray:
        lo, hi = (np.asarray(b) for b in self.bounds)
        return (hi - lo) / (self.grid_resolution - 1)


def default_bounds(positions, margin: float = 0.25):
    """Bounding box of ``positions`` grown by ``margin`` of its extent on each side."""
    positions = np.asarray(positions, dtype=float)
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def _second_field(mode: ParallelMode):
    return acceleration if mode is ParallelMode.FIRST_ORDER else jerk


def parallel_residual(p, m: FieldParams, mode=ParallelMode.HIGHER_ORDER) -> np.ndarray:
    """``|v x w| / (|v| |w|)``, the sine of the angle between the two fields."""
    v = eval_velocity(p, m)
    w = _second_field(ParallelMode(mode))(p, m)
    num = np.linalg.norm(np.cross(v, w), axis=-1)
    den = np.linalg.norm(v, axis=-1) * np.linalg.norm(w, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


# quad corners (as index offsets) for faces normal to x, y, z
_FACE_CORNERS = {
    0: ((0, 0, 0), (0, 1, 0), (0, 1, 1), (0, 0, 1)),
    1: ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
    2: ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)),
}
_TRIANGLES = ((0, 1, 2), (0, 2, 3))


def _solve_triangles(Vt, Wt, tol=1e-10):
    """Barycentric parallel points for stacked triangles.

    ``Vt``, ``Wt`` have shape (k, 3, 3) with the vertex vectors as columns.
    Returns ``(index, beta)`` for the triangles holding a solution.
    """
    # Bernstein coefficients of the quadratic v(beta) x w(beta): a component
    # whose coefficients share a strict sign cannot vanish on the triangle
    bern = [np.cross(Vt[:, :, i], Wt[:, :, i]) for i in range(3)]
    for i, j in ((0, 1), (1, 2), (0, 2)):
        bern.append(0.5 * (np.cross(Vt[:, :, i], Wt[:, :, j]) + np.cross(Vt[:, :, j], Wt[:, :, i])))
    bern = np.stack(bern, axis=1)
    excluded = np.any((bern.min(axis=1) > 0) | (bern.max(axis=1) < 0), axis=1)
    keep = np.flatnonzero(~excluded)
    if len(keep) == 0:
        return np.empty(0, int), np.empty((0, 3))
    sel, beta = _solve_candidates(Vt[keep], Wt[keep], tol)
    return keep[sel], beta


def _solve_candidates(Vt, Wt, tol):
    dv = np.abs(np.linalg.det(Vt))
    dw = np.abs(np.linalg.det(Wt))
    scale = np.linalg.norm(Vt, axis=(1, 2)) ** 3 + np.linalg.norm(Wt, axis=(1, 2)) ** 3
    ok = np.maximum(dv, dw) > 1e-13 * scale
    use_w = dw >= dv
    A = np.empty_like(Vt)
    idx_w = np.flatnonzero(ok & use_w)
    idx_v = np.flatnonzero(ok & ~use_w)
    if len(idx_w):
        A[idx_w] = np.linalg.solve(Wt[idx_w], Vt[idx_w])
    if len(idx_v):
        A[idx_v] = np.linalg.solve(Vt[idx_v], Wt[idx_v])
    cand = np.flatnonzero(ok)
    if len(cand) == 0:
        return np.empty(0, int), np.empty((0, 3))
    vals, vecs = np.linalg.eig(A[cand])
    # candidates: real eigenvalue, real eigenvector with same-sign components
    real = np.abs(vals.imag) <= tol * (1.0 + np.abs(vals.real))
    vr = vecs.real
    s = vr.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = vr / s[:, None, :]
    inside = real & (np.abs(s) > 1e-12) & np.all(beta >= -1e-9, axis=1)
    has = inside.any(axis=1)
    first = np.argmax(inside, axis=1)
    sel = np.flatnonzero(has)
    b = beta[sel, :, first[sel]]
    b = np.clip(b, 0.0, None)
    b /= b.sum(axis=1, keepdims=True)
    return cand[sel], b


def _grid(config: CoreLineConfig):
    lo, hi = (np.asarray(b) for b in config.bounds)
    R = config.grid_resolution
    axes = [np.linspace(lo[d], hi[d], R) for d in range(3)]
    return axes


def _face_points(m: FieldParams, config: CoreLineConfig):
    """All parallel-vector points on grid faces with their face keys."""
    axes = _grid(config)
    R = config.grid_resolution
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    P = np.stack([X, Y, Z], axis=-1)
    V = eval_velocity(P.reshape(-1, 3), m).reshape(R, R, R, 3)
    W = _second_field(config.mode)(P.reshape(-1, 3), m).reshape(R, R, R, 3)

    pts, keys = [], []
    for axis in (0, 1, 2):
        corners = _FACE_CORNERS[axis]
        ext = [R - 1, R - 1, R - 1]
        ext[axis] = R
        # iterate over slabs along the face normal to bound memory
        for s in range(R):
            sl = [slice(0, ext[0]), slice(0, ext[1]), slice(0, ext[2])]
            sl[axis] = slice(s, s + 1)
            base = np.stack(np.meshgrid(*[np.arange(x.start, x.stop) for x in sl], indexing="ij"), -1).reshape(-1, 3)
            for tri_id, tri in enumerate(_TRIANGLES):
                idx = [base + np.asarray(corners[c]) for c in tri]
                Vt = np.stack([V[i[:, 0], i[:, 1], i[:, 2]] for i in idx], axis=2)
                Wt = np.stack([W[i[:, 0], i[:, 1], i[:, 2]] for i in idx], axis=2)
                sel, beta = _solve_triangles(Vt, Wt)
                if len(sel) == 0:
                    continue
                Pt = np.stack([P[i[sel, 0], i[sel, 1], i[sel, 2]] for i in idx], axis=1)
                pts.append(np.einsum("nk,nkd->nd", beta, Pt))
                keys.append(np.column_stack([np.full(len(sel), axis), base[sel]]))
    if not pts:
        return np.empty((0, 3)), np.empty((0, 4), int)
    return np.vstack(pts), np.vstack(keys)


def _refine(points, keys, m: FieldParams, config: CoreLineConfig, iterations: int = 6):
    """Gauss-Newton on ``v x w = 0`` restricted to each point's face plane."""
    h = config.spacing()
    wfun = _second_field(config.mode)
    p = points.copy()
    axis = keys[:, 0]
    free = np.array([[d for d in range(3) if d != a] for a in range(3)])[axis]

    def resid(q):
        v = eval_velocity(q, m)
        w = wfun(q, m)
        nv = np.linalg.norm(v, axis=1, keepdims=True)
        nw = np.linalg.norm(w, axis=1, keepdims=True)
        return np.cross(v / np.maximum(nv, 1e-300), w / np.maximum(nw, 1e-300))

    r = resid(p)
    for _ in range(iterations):
        Jc = np.empty((len(p), 3, 2))
        for col in range(2):
            e = np.zeros_like(p)
            step = 1e-6 * h[free[:, col]]
            e[np.arange(len(p)), free[:, col]] = step
            Jc[:, :, col] = (resid(p + e) - resid(p - e)) / (2 * step[:, None])
        JtJ = np.einsum("nki,nkj->nij", Jc, Jc) + 1e-14 * np.eye(2)
        g = np.einsum("nki,nk->ni", Jc, r)
        try:
            delta = -np.linalg.solve(JtJ, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        q = p.copy()
        q[np.arange(len(p)), free[:, 0]] += delta[:, 0]
        q[np.arange(len(p)), free[:, 1]] += delta[:, 1]
        rq = resid(q)
        better = np.linalg.norm(rq, axis=1) < np.linalg.norm(r, axis=1)
        p[better] = q[better]
        r[better] = rq[better]
    # keep the polish only where it stayed close to the face it came from
    moved = np.abs(p - points) / h
    keep = np.all(moved <= 0.5, axis=1)
    out = points.copy()
    out[keep] = p[keep]
    return out


def _merge_duplicates(points, tol):
    """Representative index per point after merging coincident points."""
    n = len(points)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n:
        for i, j in sorted(cKDTree(points).query_pairs(tol)):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n)], dtype=int)


def _cells_of(key, R):
    """Grid cells sharing a face ``(axis, i, j, k)``."""
    axis, ijk = key[0], key[1:]
    out = []
    for off in (-1, 0):
        c = ijk.copy()
        c[axis] += off
        if 0 <= c[axis] < R - 1:
            out.append(tuple(c))
    return out


def _link(points, keys, rep, R):
    cell_points: dict = {}
    for i in range(len(points)):
        r = rep[i]
        for cell in _cells_of(keys[i], R):
            lst = cell_points.setdefault(cell, [])
            if r not in lst:
                lst.append(r)
    edges = set()
    for cell in sorted(cell_points):
        ids = cell_points[cell]
        if len(ids) < 2:
            continue
        if len(ids) == 2:
            edges.add((min(ids), max(ids)))
            continue
        # more than two crossings: join mutually nearest pairs
        pairs = sorted(
            (np.linalg.norm(points[a] - points[b]), min(a, b), max(a, b))
            for ai, a in enumerate(ids)
            for b in ids[ai + 1:]
        )
        used = set()
        for _, a, b in pairs:
            if a not in used and b not in used:
                edges.add((a, b))
                used.update((a, b))
    return sorted(edges)


def _chains(edges):
    adj: dict = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v in adj:
        adj[v].sort()
    seen = set()
    chains = []

    def walk(start, nxt):
        chain = [start]
        prev, cur = start, nxt
        seen.add((min(prev, cur), max(prev, cur)))
        while True:
            chain.append(cur)
            if len(adj[cur]) != 2:
                break
            a, b = adj[cur]
            n2 = b if a == prev else a
            e = (min(cur, n2), max(cur, n2))
            if e in seen:
                break
            seen.add(e)
            prev, cur = cur, n2
        return chain

    for v in sorted(adj):
        if len(adj[v]) != 2:
            for n2 in adj[v]:
                if (min(v, n2), max(v, n2)) not in seen:
                    chains.append(walk(v, n2))
    for v in sorted(adj):  # closed loops
        for n2 in adj[v]:
            if (min(v, n2), max(v, n2)) not in seen:
                chains.append(walk(v, n2))
    return chains


def extract_core_lines(m: FieldParams, config: CoreLineConfig) -> list:
    """Core lines of ``m`` inside ``config.bounds`` as polylines.

    Lines whose mean swirl strength is below ``config.strength_threshold``
    or whose arc length is below ``config.min_length`` are dropped; an empty
    list is a valid result.
    """
    pts, keys = _face_points(m, config)
    if len(pts) == 0:
        return []
    h = config.spacing()
    if config.refine:
        pts = _refine(pts, keys, m, config)
        # linear interpolation produces spurious crossings where w is small;
        # they do not survive a check on the exact fields
        ok = parallel_residual(pts, m, config.mode) <= config.residual_tolerance
        pts, keys = pts[ok], keys[ok]
        if len(pts) == 0:
            return []
    rep = _merge_duplicates(pts, 1e-6 * float(h.min()))
    edges = _link(pts, keys, rep, config.grid_resolution)
    lines = []
    for chain in _chains(edges):
        poly = pts[chain]
        keep = np.concatenate([[True], np.any(np.diff(poly, axis=0) != 0, axis=1)])
        poly = poly[keep]
        if len(poly) < 2:
            continue
        strength = float(np.mean(swirl_strength(poly, m)))
        line = Polyline(poly, PolylineKind.CORE_LINE, {"swirl_strength": strength, "mode": config.mode.value})
        if strength < config.strength_threshold or line.length() < config.min_length:
            continue
        lines.append(line)
    return lines


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    da = cKDTree(b).query(a)[0].max()
    db = cKDTree(a).query(b)[0].max()
    return float(max(da, db))


def _densify(points, step):
    out = [points[:1]]
    for p, q in zip(points[:-1], points[1:]):
        k = max(1, int(np.ceil(np.linalg.norm(q - p) / step)))
        s = np.arange(1, k + 1)[:, None] / k
        out.append(p + s * (q - p))
    return np.vstack(out)


def _point_segment_distance(x, points, chunk=2048):
    a, b = points[:-1], points[1:]
    ab = b - a
    ll = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        xs = x[s:s + chunk, None, :]
        u = np.clip(np.einsum("nkj,kj->nk", xs - a, ab) / ll, 0.0, 1.0)
        d = np.linalg.norm(xs - (a + u[..., None] * ab), axis=-1)
        out[s:s + chunk] = d.min(axis=1)
    return out


def _as_line_list(x):
    if isinstance(x, Polyline):
        return [x.points]
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return [x]
    return [l.points if isinstance(l, Polyline) else np.asarray(l, dtype=float).reshape(-1, 3) for l in x]


def polyline_hausdorff(a, b, step: Optional[float] = None) -> float:
    """Symmetric Hausdorff distance between two curves or two sets of curves.

    ``a`` and ``b`` are polylines (point arrays or :class:`Polyline`) or
    lists of them; a set is treated as the union of its segments.  Each
    side is resampled with spacing ``step`` (default: 1/20 of the median
    segment length) and measured against the other side's segments.
    """
    A, B = _as_line_list(a), _as_line_list(b)
    if not A or not B:
        raise ValueError("both sides need at least one polyline")
    if step is None:
        seg = np.concatenate([np.linalg.norm(np.diff(p, axis=0), axis=1) for p in A + B])
        seg = seg[seg > 0]
        step = float(np.median(seg)) / 20 if len(seg) else 1.0

    def directed(X, Y):
        pts = np.vstack([_densify(p, step) if len(p) > 1 else p for p in X])
        best = np.full(len(pts), np.inf)
        for q in Y:
            if len(q) == 1:
                d = np.linalg.norm(pts - q[0], axis=1)
            else:
                d = _point_segment_distance(pts, q)
            best = np.minimum(best, d)
        return best.max()

    return float(max(directed(A, B), directed(B, A)))
