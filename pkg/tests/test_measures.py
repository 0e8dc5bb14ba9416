import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from configlab.errors import UsageError
from configlab.measures import (SimplexSpec, fit_sphere_decay, haar_rotations,
                                intersection_sphere, sphere_fourier, sphere_fourier_bessel,
                                sphere_quadrature, unit_sphere_quadrature)


def test_circle_first_moment_vanishes():
    q = sphere_quadrature(2, 1.0, budget=256)
    assert abs(q.integrate(q.nodes[:, 0])) < 1e-14


def test_sphere_second_moment():
    q = sphere_quadrature(3, 1.0)
    assert abs(q.integrate(q.nodes[:, 0] ** 2) - 1 / 3) < 1e-3


def test_monte_carlo_radius_constraint():
    q = sphere_quadrature(4, 2.0, budget=10**5, seed=1)
    assert not q.exact
    assert abs(q.integrate(np.sum(q.nodes**2, axis=1)) - 4) < 3e-2


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_unit_quadrature_normalized(m):
    q = unit_sphere_quadrature(m, 512, seed=2)
    assert abs(q.weights.sum() - 1) < 1e-15
    assert np.allclose(np.linalg.norm(q.nodes, axis=1), 1.0, atol=1e-8)


def test_equilateral_intersection_sphere():
    s = SimplexSpec.regular(2, 1.0)
    x1 = s.embed(3)[0]
    assert abs(np.linalg.norm(x1) - 1) < 1e-12
    sph = intersection_sphere(3, [x1], s, 2)
    assert np.allclose(sph.center, x1 / 2, atol=1e-12)
    assert abs(sph.radius - np.sqrt(3) / 2) < 1e-12


def test_first_intersection_sphere_is_full_sphere():
    s = SimplexSpec.regular(2, 1.5)
    sph = intersection_sphere(3, [], s, 1)
    assert np.allclose(sph.center, 0)
    assert abs(sph.radius - 1.5) < 1e-12


def test_right_simplex_constraint_residuals():
    s = SimplexSpec(np.eye(2))
    x1 = np.array([1.0, 0.0, 0.0])
    nodes = intersection_sphere(3, [x1], s, 2).quadrature(budget=1000).nodes
    assert np.max(np.abs(np.linalg.norm(nodes, axis=1) - 1)) < 1e-8
    assert np.max(np.abs(np.linalg.norm(nodes - x1, axis=1) - np.sqrt(2))) < 1e-8


def test_intersection_radius_is_span_distance():
    s = SimplexSpec(np.array([[1.0, 0.0, 0.0], [0.3, 0.8, 0.0], [0.2, 0.1, 0.9]]))
    X = s.embed(4)
    for j in range(1, 4):
        sph = intersection_sphere(4, X[: j - 1], s, j)
        # distance from v_j to the span of the earlier vertices
        P = X[: j - 1]
        v = X[j - 1]
        if len(P):
            v = v - P.T @ np.linalg.lstsq(P.T, v, rcond=None)[0]
        assert abs(sph.radius - np.linalg.norm(v)) < 1e-10
    assert s.thickness <= min(s.span_distances) + 1e-15


def test_degenerate_simplex_rejected():
    with pytest.raises(UsageError):
        SimplexSpec(np.array([[1.0, 0.0], [2.0, 0.0]]))


def test_rotations_are_special_orthogonal():
    U = haar_rotations(4, 200, seed=3)
    eye = np.eye(4)
    assert np.max(np.abs(np.einsum("nji,njk->nik", U, U) - eye)) <= 1e-12
    assert np.max(np.abs(np.linalg.det(U) - 1)) <= 1e-12


def test_planar_rotation_angle_uniform():
    U = haar_rotations(2, 10**4, seed=0)
    assert abs(U[:, 0, 0].mean()) < 0.03


def test_haar_trace_expectation_so3():
    # angle density on SO(3) is (1 - cos t)/pi on [0, pi]; trace is 1 + 2 cos t
    expected = integrate.quad(lambda t: (1 + 2 * np.cos(t)) * (1 - np.cos(t)) / np.pi, 0, np.pi)[0]
    U = haar_rotations(3, 10**4, seed=0)
    assert abs(np.trace(U, axis1=1, axis2=2).mean() - expected) < 0.05


def test_sphere_fourier_values():
    assert sphere_fourier(2, 0.0) == 1.0
    assert abs(sphere_fourier(3, 0.5)) < 1e-12


def test_sphere_fourier_matches_bessel_form():
    xi = np.linspace(0, 20, 101)
    for d in (2, 3, 4, 5):
        assert np.allclose(sphere_fourier(d, xi), sphere_fourier_bessel(d, xi), atol=1e-10)


@pytest.mark.parametrize("d", [2, 3])
def test_decay_envelope(d):
    fit = fit_sphere_decay(d)
    assert abs(fit.slope + (d - 1) / 2) <= 0.1
    assert fit.constant <= 1.0
    ratios = fit.maxima * fit.radii ** ((d - 1) / 2)
    assert ratios.max() / ratios.min() <= 2


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(0, 200))
def test_sphere_fourier_bounded(d, r):
    v = sphere_fourier(d, r)
    assert np.isrealobj(v) and abs(v) <= 1 + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.floats(0.1, 5), st.integers(16, 400), st.integers(0, 99))
def test_quadrature_nodes_on_sphere(d, r, budget, seed):
    q = sphere_quadrature(d, r, budget=budget, seed=seed)
    assert abs(q.weights.sum() - 1) < 1e-12
    assert np.max(np.abs(np.linalg.norm(q.nodes, axis=1) - r)) < 1e-8 * max(1, r)
