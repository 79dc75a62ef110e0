import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinsurf.errors import InvalidSpec
from kinsurf.field import FieldParams, Order, axis_of_rotation, eval_velocity
from kinsurf.fitting import FitConfig, fit
from kinsurf.synthetic import DEFAULTS, ShapeKind, ShapeSpec, generate, merge_with_outlier

KINDS = list(ShapeKind)


@pytest.mark.parametrize("kind", KINDS)
def test_generate_is_deterministic(kind):
    a = generate(ShapeSpec(kind, n_samples=300, noise_sigma=0.01, seed=3))
    b = generate(ShapeSpec(kind, n_samples=300, noise_sigma=0.01, seed=3))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.normals, b.normals)
    c = generate(ShapeSpec(kind, n_samples=300, noise_sigma=0.01, seed=4))
    assert not np.array_equal(a.positions, c.positions)


@pytest.mark.parametrize("kind", KINDS)
def test_normals_are_unit(kind):
    cloud = generate(ShapeSpec(kind, n_samples=500, noise_sigma=0.05))
    assert len(cloud) == 500
    assert np.abs(np.linalg.norm(cloud.normals, axis=1) - 1).max() < 1e-12


@pytest.mark.parametrize("bad", [
    dict(kind="torus"),
    dict(kind="cylinder", n_samples=10),
    dict(kind="cylinder", noise_sigma=-1.0),
    dict(kind="cylinder", axis=(0.0, 0.0, 0.0)),
    dict(kind="cylinder", params={"pitch": 1.0}),
])
def test_invalid_specs(bad):
    with pytest.raises(InvalidSpec):
        ShapeSpec(**bad)


@pytest.mark.parametrize("kind, params", [
    ("cylinder", {"radius": -1.0}),
    ("cone", {"half_angle": 2.0}),
    ("log-spiral", {"tube_radius": 3.0}),
])
def test_invalid_geometry(kind, params):
    with pytest.raises(InvalidSpec):
        generate(ShapeSpec(kind, n_samples=100, params=params))


def test_sample_geometry_exact():
    cyl = generate(ShapeSpec("cylinder", n_samples=400))
    assert np.allclose(np.hypot(cyl.positions[:, 0], cyl.positions[:, 1]), 1.0)
    assert np.allclose(cyl.normals[:, :2], cyl.positions[:, :2]) and np.all(cyl.normals[:, 2] == 0)
    sph = generate(ShapeSpec("sphere", n_samples=400, params={"radius": 2.0}, center=(1, 2, 3)))
    assert np.allclose(sph.positions - [1, 2, 3], 2.0 * sph.normals)


def test_straight_helix_surface_is_tube():
    g = DEFAULTS[ShapeKind.STRAIGHT_HELIX_TUBE]
    cloud = generate(ShapeSpec("straight-helix", n_samples=400))
    centers = cloud.positions - g["tube_radius"] * cloud.normals
    assert np.allclose(np.hypot(centers[:, 0], centers[:, 1]), g["helix_radius"])


def test_log_spiral_is_tangent_to_its_generating_flow():
    g = DEFAULTS[ShapeKind.LOG_SPIRAL_TUBE]
    cloud = generate(ShapeSpec("log-spiral", n_samples=2000))
    m = FieldParams.first((0, 0, g["omega"]), (0, 0, 0), g["growth"])
    v = eval_velocity(cloud.positions, m)
    ratio = np.abs(np.einsum("ij,ij->i", v, cloud.normals)) / np.linalg.norm(v, axis=1)
    assert ratio.max() < 1e-9


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda a: np.linalg.norm(a) > 0.1))
def test_axis_and_center_are_applied(axis):
    base = generate(ShapeSpec("cylinder", n_samples=100))
    moved = generate(ShapeSpec("cylinder", n_samples=100, axis=tuple(axis), center=(1.0, -2.0, 0.5)))
    a = np.asarray(axis) / np.linalg.norm(axis)
    rel = moved.positions - [1.0, -2.0, 0.5]
    # distances to the axis and along it are preserved
    assert np.allclose(rel @ a, base.positions[:, 2])
    assert np.allclose(np.linalg.norm(np.cross(rel, a), axis=1), 1.0)
    assert np.allclose(moved.normals @ a, 0.0, atol=1e-12)


def test_merge_labels():
    a = generate(ShapeSpec("cylinder", n_samples=100))
    b = generate(ShapeSpec("cylinder-outlier", n_samples=150))
    merged = merge_with_outlier(a, b)
    assert len(merged) == 250
    assert merged.labels.sum() == 100 and np.all(merged.labels[:100]) and not np.any(merged.labels[100:])
    assert np.array_equal(merged.positions[100:], b.positions)


def _axis_in_input_units(rep):
    p, d = axis_of_rotation(rep.params)
    return rep.transform.invert(p), d


@pytest.mark.parametrize("kind", ["cylinder", "cone"])
def test_exact_surfaces_of_revolution_fit_exactly(kind):
    cloud = generate(ShapeSpec(kind, n_samples=1500, axis=(1.0, 1.0, 0.0), center=(0.5, 0.0, -1.0)))
    rep = fit(cloud, FitConfig(order=Order.FIRST))
    assert rep.rmse < 1e-8
    p, d = _axis_in_input_units(rep)
    a = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert abs(abs(d @ a) - 1) < 1e-8
    assert np.linalg.norm(np.cross(p - [0.5, 0.0, -1.0], a)) < 1e-6


def test_exact_sphere_axis_passes_through_center():
    center = np.array([0.3, -0.2, 1.0])
    cloud = generate(ShapeSpec("sphere", n_samples=1500, center=tuple(center)))
    rep = fit(cloud, FitConfig(order=Order.FIRST))
    assert rep.rmse < 1e-8
    p, d = _axis_in_input_units(rep)
    assert np.linalg.norm(np.cross(center - p, d)) < 1e-6
