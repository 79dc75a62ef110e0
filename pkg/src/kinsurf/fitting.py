"""Gaussian kinematic surface fitting.

Each oriented point contributes two quadratic forms in the parameter
vector ``m``: ``M_i = f_i f_i^T`` measures the squared normal velocity and
``N_i`` the squared velocity norm plus the ``w_p``-weighted squared
gradient of ``v . n``.  Fitting minimizes ``sum_i m^T M_i m / m^T N_i m`` by
repeatedly solving the generalized eigenproblem ``B m = lambda C m``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .cloud import NormalizationTransform, PointCloud
from .errors import (
    DegenerateDenominator,
    EigenFailure,
    InsufficientPoints,
    RankDeficient,
    SingularNormalization,
)
from .field import FieldParams, Order, eval_velocity

log = logging.getLogger(__name__)

MIN_POINTS = 10


@dataclass(frozen=True)
class FitConfig:
    order: Order = Order.SECOND
    w_p: float = 0.001
    iterations: int = 15
    robust: bool = False
    eig_tolerance: float = 1e-12
    nu_bracket: tuple = (0.1, 1e6)
    nu_init: float = 10.0
    em_inner_iterations: int = 50

    def __post_init__(self):
        object.__setattr__(self, "order", Order(self.order))
        if self.w_p < 0:
            raise ValueError("w_p must be >= 0")
        if self.iterations < 1 or self.em_inner_iterations < 1:
            raise ValueError("iterations must be >= 1")
        lo, hi = self.nu_bracket
        if not 0 < lo < hi:
            raise ValueError("nu_bracket must satisfy 0 < lo < hi")


@dataclass
class QuadraticForms:
    """The pair ``(M, N)`` of one oriented point."""

    M: np.ndarray
    N: np.ndarray


@dataclass
class FormBatch:
    """Stacked forms of a whole cloud.

    ``features`` holds ``f_i`` (``M_i = f_i f_i^T``); when the batch is built
    from explicit matrices only ``M`` is set.
    """

    N: np.ndarray
    features: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.N)

    @property
    def dim(self) -> int:
        return self.N.shape[-1]

    def m_quad(self, m) -> np.ndarray:
        if self.features is not None:
            return (self.features @ m) ** 2
        return np.einsum("j,ijk,k->i", m, self.M, m)

    def n_quad(self, m) -> np.ndarray:
        return np.einsum("j,ijk,k->i", m, self.N, m)

    def weighted_m(self, coef) -> np.ndarray:
        if self.features is not None:
            return (self.features * coef[:, None]).T @ self.features
        return np.einsum("i,ijk->jk", coef, self.M)

    def weighted_n(self, coef) -> np.ndarray:
        return np.einsum("i,ijk->jk", coef, self.N)

    @classmethod
    def from_forms(cls, forms: Sequence[QuadraticForms]) -> "FormBatch":
        return cls(N=np.stack([f.N for f in forms]), M=np.stack([f.M for f in forms]))


@dataclass
class FitReport:
    params: FieldParams
    rmse: float
    transform: NormalizationTransform
    iterations_run: int
    eigenvalue: float
    w_p: float
    distances: np.ndarray
    nu: Optional[float] = None
    sigma: Optional[float] = None
    weights: Optional[np.ndarray] = None
    inlier_rmse: Optional[float] = None
    objective_history: list = field(default_factory=list)

    @property
    def order(self) -> Order:
        return self.params.order


# -- per-point linear maps ------------------------------------------------

def velocity_matrix(p, order) -> np.ndarray:
    """``H(p)`` with ``v(p, m) = H(p) m``; shape (n, 3, dim)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    n = len(p)
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    blocks = [-_skew_batch(p), eye, p[:, :, None]]
    if Order(order) is Order.SECOND:
        pp = np.einsum("ij,ij->i", p, p)
        F = np.einsum("ni,nj->nij", p, p) - pp[:, None, None] * eye
        blocks.insert(0, F)
    return np.concatenate(blocks, axis=2)


def gradient_matrix(p, n, order) -> np.ndarray:
    """``K(p, n)`` with ``grad_p(v . n) = K(p, n) m``; shape (k, 3, dim)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    nn = np.atleast_2d(np.asarray(n, dtype=float))
    k = len(p)
    blocks = [_skew_batch(nn), np.zeros((k, 3, 3)), nn[:, :, None]]
    if Order(order) is Order.SECOND:
        pn = np.einsum("ij,ij->i", p, nn)
        G = (
            pn[:, None, None] * np.eye(3)
            - 2.0 * np.einsum("ni,nj->nij", p, nn)
            + np.einsum("ni,nj->nij", nn, p)
        )
        blocks.insert(0, G)
    return np.concatenate(blocks, axis=2)


def _skew_batch(a) -> np.ndarray:
    out = np.zeros(a.shape[:-1] + (3, 3))
    out[..., 0, 1] = -a[..., 2]
    out[..., 0, 2] = a[..., 1]
    out[..., 1, 0] = a[..., 2]
    out[..., 1, 2] = -a[..., 0]
    out[..., 2, 0] = -a[..., 1]
    out[..., 2, 1] = a[..., 0]
    return out


def feature_vector(p, n, order) -> np.ndarray:
    """``f(p, n)`` such that ``v(p, m) . n == m . f(p, n)``.

    First order: ``[p x n, n, p . n]``; second order prepends ``(n x p) x p``.
    """
    p = np.asarray(p, dtype=float)
    n = np.asarray(n, dtype=float)
    parts = [np.cross(p, n), n, np.atleast_1d(p @ n)]
    if Order(order) is Order.SECOND:
        parts.insert(0, np.cross(np.cross(n, p), p))
    return np.concatenate(parts)


def feature_matrix(positions, normals, order) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    normals = np.asarray(normals, dtype=float)
    parts = [
        np.cross(positions, normals),
        normals,
        np.einsum("ij,ij->i", positions, normals)[:, None],
    ]
    if Order(order) is Order.SECOND:
        parts.insert(0, np.cross(np.cross(normals, positions), positions))
    return np.concatenate(parts, axis=1)


def grad_dot(p, n, m: FieldParams) -> np.ndarray:
    """Gradient of ``v(p) . n`` with respect to ``p``."""
    p = np.asarray(p, dtype=float)
    n = np.asarray(n, dtype=float)
    t = m.t
    g = np.cross(n, m.r) + m.gamma * n
    if m.order is Order.SECOND:
        g = g + t * (p @ n) + (t @ p) * n - 2.0 * p * (t @ n)
    return g


def build_forms_batch(positions, normals, order, w_p: float) -> FormBatch:
    positions = np.asarray(positions, dtype=float)
    normals = np.asarray(normals, dtype=float)
    H = velocity_matrix(positions, order)
    K = gradient_matrix(positions, normals, order)
    N = np.einsum("nki,nkj->nij", H, H)
    if w_p:
        N += w_p * np.einsum("nki,nkj->nij", K, K)
    return FormBatch(N=N, features=feature_matrix(positions, normals, order))


def build_forms(point, order, w_p: float) -> QuadraticForms:
    """Forms of a single oriented point ``(position, normal)``."""
    p, n = (np.asarray(x, dtype=float) for x in point)
    batch = build_forms_batch(p[None], n[None], order, w_p)
    f = batch.features[0]
    return QuadraticForms(M=np.outer(f, f), N=batch.N[0])


def distance(point, m: FieldParams, w_p: float) -> float:
    """Signed normalized distance of one oriented point to the kinematic surface."""
    p, n = (np.asarray(x, dtype=float) for x in point)
    v = eval_velocity(p, m)
    g = grad_dot(p, n, m)
    den = v @ v + w_p * (g @ g)
    if not den > 0:
        raise DegenerateDenominator("velocity and gradient vanish at the point")
    return float((v @ n) / np.sqrt(den))


def distances(positions, normals, m: FieldParams, w_p: float) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    normals = np.asarray(normals, dtype=float)
    v = eval_velocity(positions, m)
    num = np.einsum("ij,ij->i", v, normals)
    g = np.cross(normals, m.r) + m.gamma * normals
    if m.order is Order.SECOND:
        t = m.t
        g = (
            g
            + np.einsum("i,j->ij", np.einsum("ij,ij->i", positions, normals), t)
            + (positions @ t)[:, None] * normals
            - 2.0 * positions * (normals @ t)[:, None]
        )
    den = np.einsum("ij,ij->i", v, v) + w_p * np.einsum("ij,ij->i", g, g)
    if np.any(den <= 0):
        raise DegenerateDenominator("velocity and gradient vanish at a point")
    return num / np.sqrt(den)


# -- eigen solve ----------------------------------------------------------

def canonical_sign(m, order) -> np.ndarray:
    """Flip ``m`` so the largest-magnitude entry of the r block is positive.

    Falls back to the c block when r is numerically zero.
    """
    m = np.asarray(m, dtype=float)
    off = 3 if Order(order) is Order.SECOND else 0
    block = m[off:off + 3]
    if np.linalg.norm(block) <= 1e-10 * np.linalg.norm(m):
        block = m[off + 3:off + 6]
    if np.linalg.norm(block) == 0:
        return m
    k = int(np.argmax(np.abs(block)))
    return -m if block[k] < 0 else m


def solve_generalized(B, C, tie_tol: float = 1e-12):
    """Eigenpair of ``B x = lambda C x`` with the smallest ``|lambda|``.

    ``C`` gets one jitter of ``1e-12 trace(C)/dim`` when it is not positive
    definite.
    """
    B = 0.5 * (B + B.T)
    C = 0.5 * (C + C.T)
    dim = len(C)
    tr = np.trace(C)
    if not np.all(np.isfinite(C)) or not np.all(np.isfinite(B)) or not tr > 0:
        raise SingularNormalization("normalization matrix is zero or non-finite")
    # only the direction of lambda matters; unit traces keep the scales sane
    C = C / tr
    trb = np.trace(B)
    if trb > 0:
        B = B / trb
    try:
        scipy.linalg.cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        C = C + 1e-12 / dim * np.eye(dim)
        try:
            scipy.linalg.cholesky(C, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularNormalization("C is singular beyond jitter repair") from exc
    try:
        lam, vecs = scipy.linalg.eigh(B, C)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    a = np.abs(lam)
    k = int(np.flatnonzero(a <= a.min() + tie_tol)[0])
    x = vecs[:, k]
    scale = trb / tr if trb > 0 else 1.0
    return float(lam[k] * scale), x / np.linalg.norm(x)


def _as_batch(forms) -> FormBatch:
    if isinstance(forms, FormBatch):
        return forms
    return FormBatch.from_forms(list(forms))


def assemble(forms, m_prev, weights=None):
    """``(B, C)`` for the current estimate ``m_prev`` and weights ``z_i``."""
    batch = _as_batch(forms)
    m_prev = np.asarray(m_prev, dtype=float)
    z = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=float)
    a = batch.m_quad(m_prev)
    w = batch.n_quad(m_prev)
    if np.any(w <= 0):
        raise SingularNormalization("m^T N_i m vanishes at some point")
    B = batch.weighted_m(z / w)
    C = batch.weighted_n(z * a / (w * w))
    return B, C


def solve_once(forms, m_prev, weights=None, order=None, return_eigenvalue=False):
    """One fixed-point round: assemble ``B_m``, ``C_m`` and take the eigenvector.

    ``forms`` is a :class:`FormBatch` or a list of :class:`QuadraticForms`.
    """
    batch = _as_batch(forms)
    B, C = assemble(batch, m_prev, weights)
    lam, m = solve_generalized(B, C)
    if order is None:
        order = Order.FIRST if batch.dim == 7 else Order.SECOND
    m = canonical_sign(m, order)
    if return_eigenvalue:
        return m, lam
    return m


def initial_estimate(batch: FormBatch, weights=None, order=None):
    """Warm start from ``sum M_i m = lambda sum N_i m``."""
    z = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=float)
    lam, m = solve_generalized(batch.weighted_m(z), batch.weighted_n(z))
    if order is None:
        order = Order.FIRST if batch.dim == 7 else Order.SECOND
    return canonical_sign(m, order), lam


# -- driver ---------------------------------------------------------------

def objective(batch: FormBatch, m, weights=None) -> float:
    """``sum_i z_i m^T M_i m / m^T N_i m``."""
    d2 = batch.m_quad(m) / batch.n_quad(m)
    if weights is not None:
        d2 = d2 * weights
    return float(d2.sum())


def safeguarded_step(batch: FormBatch, m, weights=None, order=None, max_halvings: int = 20):
    """``solve_once`` followed by a backtracking guard on the objective.

    When the eigenvector raises the (weighted) objective, the step is
    shortened along the arc from ``m`` towards it; if no shortened step
    helps, ``m`` is kept.  Fixed points of the plain iteration are fixed
    points here too.
    """
    m = np.asarray(m, dtype=float)
    if order is None:
        order = Order.FIRST if batch.dim == 7 else Order.SECOND
    new, lam = solve_once(batch, m, weights, order=order, return_eigenvalue=True)
    j0 = objective(batch, m, weights)
    j1 = objective(batch, new, weights)
    if j1 <= j0 + 1e-12 * max(1.0, j0):
        return new, lam
    target = new if new @ m >= 0 else -new
    alpha = 0.5
    for _ in range(max_halvings):
        trial = (1 - alpha) * m + alpha * target
        trial = canonical_sign(trial / np.linalg.norm(trial), order)
        if objective(batch, trial, weights) <= j0:
            log.debug("step shortened to %.3g", alpha)
            return trial, lam
        alpha *= 0.5
    return m, lam


def prepare(cloud: PointCloud, config: FitConfig):
    """Normalize the cloud and build all forms."""
    if len(cloud) < MIN_POINTS:
        raise InsufficientPoints(f"need at least {MIN_POINTS} points, got {len(cloud)}")
    normals = cloud.normals
    if not np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-6):
        raise ValueError("normals must be unit length")
    transform = NormalizationTransform.fit(cloud.positions)
    q = transform.apply(cloud.positions)
    batch = build_forms_batch(q, normals, config.order, config.w_p)
    return transform, q, batch


def fit(cloud: PointCloud, config: FitConfig = FitConfig()) -> FitReport:
    """Fit a stationary velocity field to an oriented point cloud.

    Runs ``config.iterations`` fixed-point rounds after the warm start.  With
    ``config.robust`` the Student-t reweighting of :mod:`kinsurf.robust` is
    interleaved.
    """
    if config.robust:
        from .robust import robust_fit

        return robust_fit(cloud, config)

    transform, q, batch = prepare(cloud, config)
    try:
        m, lam = initial_estimate(batch, order=config.order)
    except SingularNormalization as exc:
        raise RankDeficient(str(exc)) from exc
    history = []
    for it in range(config.iterations):
        d = batch.m_quad(m) / batch.n_quad(m)
        history.append(float(d.sum()))
        m, lam = safeguarded_step(batch, m, order=config.order)
        log.debug("iteration %d: objective %.6e", it, history[-1])
    params = FieldParams.from_flat(m, config.order)
    d = distances(q, cloud.normals, params, config.w_p)
    history.append(float(np.sum(d * d)))
    rmse = float(np.sqrt(np.mean(d * d)))
    return FitReport(
        params=params,
        rmse=rmse,
        transform=transform,
        iterations_run=config.iterations,
        eigenvalue=lam,
        w_p=config.w_p,
        distances=d,
        objective_history=history,
    )
