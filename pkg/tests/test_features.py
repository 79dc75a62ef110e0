import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinsurf.errors import DegenerateField, NotACriticalPoint
from kinsurf.features import (
    CoreLineConfig,
    CriticalClass,
    ParallelMode,
    acceleration,
    classify_critical_point,
    default_bounds,
    extract_core_lines,
    hausdorff,
    jerk,
    parallel_residual,
    polyline_hausdorff,
    projection_metric,
    swirl_strength,
)
from kinsurf.field import FieldParams, PolylineKind, eval_velocity, velocity_jacobian

BOX = (-np.ones(3), np.ones(3))


def helical(gamma=0.1):
    return FieldParams.first((0, 0, 1), (0, 0, 0.5), gamma)


def bent():
    return FieldParams.second((0.3, 0.1, 0.0), (0, 0, 1), (0, 0, 0.5), 0.0)


# -- critical points ---------------------------------------------------------

@pytest.mark.parametrize("r, gamma, kind", [
    ((0, 0, 0), 1.0, CriticalClass.SOURCE),
    ((0, 0, 0), -1.0, CriticalClass.SINK),
    ((0, 0, 1), -0.5, CriticalClass.SPIRAL_SINK),
    ((0, 0, 1), 0.5, CriticalClass.SPIRAL_SOURCE),
    ((0, 0, 1), 0.0, CriticalClass.DEGENERATE),
])
def test_classify_origin(r, gamma, kind):
    info = classify_critical_point(np.zeros(3), FieldParams.first(r, (0, 0, 0), gamma))
    assert info.kind is kind
    assert len(info.eigenvalues) == 3


@pytest.mark.parametrize("r, kind", [
    ((0, 0, 0), CriticalClass.SADDLE),  # eigenvalues -0.5, 0.5, 0.5
    ((1, 0, 0), CriticalClass.SPIRAL_SADDLE),  # -0.5, 0.5 +- i
])
def test_classify_second_order_saddles(r, kind):
    # c is chosen so that p0 = e_x is a critical point
    t, gamma, p0 = np.array([1.0, 0.0, 0.0]), -0.5, np.array([1.0, 0.0, 0.0])
    c = -np.cross(r, p0) - gamma * p0 - np.cross(np.cross(t, p0), p0)
    info = classify_critical_point(p0, FieldParams.second(t, r, c, gamma))
    assert info.kind is kind


def test_classify_rejects_regular_point():
    with pytest.raises(NotACriticalPoint):
        classify_critical_point((1.0, 0.0, 0.0), helical())


# -- derived fields ------------------------------------------------------------

def test_jerk_constant_field_is_zero(rng):
    m = FieldParams.first((0, 0, 0), (1.0, -2.0, 0.5), 0.0)
    p = rng.normal(size=(20, 3))
    assert np.all(jerk(p, m) == 0) and np.all(acceleration(p, m) == 0)


def test_jerk_first_order_is_J_squared_v(rng):
    m = FieldParams.first(rng.normal(size=3), rng.normal(size=3), 0.3)
    p = rng.normal(size=3)
    J = velocity_jacobian(p, m)
    v = J @ p + m.c  # the first-order field is affine with J constant
    assert np.allclose(jerk(p, m), J @ J @ v, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2])
def test_jerk_is_flow_derivative_of_acceleration(rng, order):
    for _ in range(5):
        t = rng.normal(size=3) if order == 2 else np.zeros(3)
        m = FieldParams(order, rng.normal(size=3), rng.normal(size=3), rng.normal(), t)
        p = rng.normal(size=3)
        v = eval_velocity(p, m)
        h = 1e-5
        fd = (acceleration(p + h * v, m) - acceleration(p - h * v, m)) / (2 * h)
        assert np.allclose(jerk(p, m), fd, rtol=1e-6, atol=1e-6)


def test_swirl_strength_of_rotation():
    assert swirl_strength(np.zeros(3), FieldParams.first((0, 0, 2), (0, 0, 0), 0.3)) == pytest.approx(2.0)


def test_projection_metric_examples():
    t = np.array([-0.46, 0.23, 0.17])
    r = np.array([-0.14, -0.03, 0.81])
    m = FieldParams.second(t, r, (0, 0, 0), 0.0)
    assert projection_metric(m) == pytest.approx(0.237, abs=5e-4)
    perp = FieldParams.second((1, 0, 0), (0, 0, 1), (0, 0, 0), 0.0)
    assert projection_metric(perp) == 0.0
    assert projection_metric(FieldParams.second((0, 0, -2), (0, 0, 5), (0, 0, 0), 0.0)) == pytest.approx(-2.0)
    r = np.array([0.3, -1.2, 0.5])
    assert projection_metric(FieldParams.second(2 * r, r, (0, 0, 0), 0.0)) == pytest.approx(2 * np.linalg.norm(r))


def test_projection_metric_errors():
    with pytest.raises(ValueError):
        projection_metric(helical())
    with pytest.raises(DegenerateField):
        projection_metric(FieldParams.second((1, 0, 0), (0, 0, 0), (0, 0, 0), 0.0))
    assert projection_metric(helical().as_second()) == 0.0


# -- core lines ---------------------------------------------------------------

@pytest.mark.parametrize("mode", list(ParallelMode))
def test_core_line_of_helical_field_is_the_axis(mode):
    lines = extract_core_lines(helical(), CoreLineConfig(BOX, grid_resolution=16, mode=mode))
    assert len(lines) == 1
    line = lines[0]
    assert line.kind is PolylineKind.CORE_LINE
    assert np.abs(line.points[:, :2]).max() < 1e-9
    assert line.length() == pytest.approx(2.0, abs=1e-9)
    assert line.meta["swirl_strength"] == pytest.approx(1.0)


def test_core_line_passes_near_critical_point():
    m = FieldParams.first((0, 0, 1), (0, 0, 0), -0.2)
    cfg = CoreLineConfig(BOX, grid_resolution=15)
    lines = extract_core_lines(m, cfg)
    assert lines
    cell = float(np.linalg.norm(cfg.spacing()))
    dist = min(np.linalg.norm(line.points, axis=1).min() for line in lines)
    assert dist <= cell


def test_constant_field_has_no_core_lines():
    m = FieldParams.first((0, 0, 0), (1, 0, 0), 0.0)
    assert extract_core_lines(m, CoreLineConfig(BOX, grid_resolution=12, strength_threshold=0.0)) == []


def test_core_line_points_satisfy_parallel_condition():
    m = bent()
    for line in extract_core_lines(m, CoreLineConfig(BOX, grid_resolution=20)):
        assert parallel_residual(line.points, m).max() < 1e-4


def test_core_lines_converge_under_grid_refinement():
    m = bent()
    coarse = extract_core_lines(m, CoreLineConfig(BOX, grid_resolution=24))
    fine = extract_core_lines(m, CoreLineConfig(BOX, grid_resolution=48))
    cell = float(np.linalg.norm(CoreLineConfig(BOX, grid_resolution=24).spacing()))
    assert coarse and fine
    assert polyline_hausdorff(coarse, fine) < 0.1 * cell


_reference = {}


def _reference_lines():
    if not _reference:
        _reference["lines"] = extract_core_lines(bent(), CoreLineConfig(BOX, grid_resolution=12, strength_threshold=0.0))
    return _reference["lines"]


@settings(max_examples=15)
@given(st.floats(0, 2), st.floats(0, 3))
def test_filters_only_remove_lines(strength, min_length):
    base = _reference_lines()
    cfg = CoreLineConfig(BOX, grid_resolution=12, strength_threshold=strength, min_length=min_length)
    kept = extract_core_lines(bent(), cfg)
    assert len(kept) <= len(base)
    for line in kept:
        assert line.meta["swirl_strength"] >= strength and line.length() >= min_length
        assert any(len(b.points) == len(line.points) and np.array_equal(b.points, line.points) for b in base)


def test_config_validation():
    with pytest.raises(ValueError):
        CoreLineConfig(BOX, grid_resolution=4)
    with pytest.raises(ValueError):
        CoreLineConfig((np.ones(3), -np.ones(3)))
    with pytest.raises(ValueError):
        CoreLineConfig(BOX, mode="curvature")


def test_default_bounds():
    lo, hi = default_bounds(np.array([[0.0, 0.0, 0.0], [2.0, 4.0, 1.0]]), 0.25)
    assert np.allclose(lo, [-0.5, -1.0, -0.25]) and np.allclose(hi, [2.5, 5.0, 1.25])


# -- distances ------------------------------------------------------------------

def test_polyline_hausdorff_parallel_segments():
    a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    b = np.array([[0.0, 0.3, 0], [0.5, 0.3, 0], [1.0, 0.3, 0]])
    assert polyline_hausdorff(a, b) == pytest.approx(0.3)


def test_polyline_hausdorff_uses_segments_not_vertices():
    # point-set distance sees the sparse vertices; the curve distance does not
    a = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    b = np.array([[0.0, 0, 0], [5.0, 0, 0], [10.0, 0, 0]])
    assert polyline_hausdorff(a, b) == pytest.approx(0.0, abs=1e-12)
    assert hausdorff(a, b) == pytest.approx(5.0)


def test_polyline_hausdorff_sets_and_asymmetry():
    a = [np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([[0.0, 2, 0], [1.0, 2, 0]])]
    b = [np.array([[0.0, 0, 0], [1.0, 0, 0]])]
    # the second curve of ``a`` is 2 away from everything in ``b``
    assert polyline_hausdorff(a, b) == pytest.approx(2.0)
    assert polyline_hausdorff(b, a) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        polyline_hausdorff([], b)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_polyline_hausdorff_translation_oracle(dx, dy, dz):
    a = np.array([[0.0, 0, 0], [1.0, 1, 0], [2.0, 0, 1]])
    shift = np.array([dx, dy, dz])
    assert polyline_hausdorff(a, a + shift) <= math.sqrt(dx * dx + dy * dy + dz * dz) + 1e-12
    assert polyline_hausdorff(a, a) < 1e-12
