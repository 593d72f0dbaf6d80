import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retromfg import ops
from retromfg.grid import ScalarField, build_grid

G2 = build_grid((1.0, 0.5), 1.0, (9, 7), 4)
finite = st.floats(-10, 10, allow_nan=False)


@given(arrays(float, G2.shape, elements=finite))
def test_neumann_gradient_vanishes_on_faces(vals):
    gx, gy = ops.gradient(ScalarField(G2, vals))
    assert np.all(gx.values[[0, -1], :] == 0)
    assert np.all(gy.values[:, [0, -1]] == 0)


@given(arrays(float, G2.shape, elements=finite), arrays(float, G2.shape, elements=finite),
       arrays(float, G2.shape, elements=st.floats(0, 4)))
def test_conservative_divergence_telescopes(m, v, k2):
    w = G2.spatial_weights()
    for scheme in ("centered", "upwind"):
        div = ops.divergence_of_flux(ScalarField(G2, m), ScalarField(G2, v), ScalarField(G2, k2), scheme)
        scale = 1 + np.abs(m).max() * np.abs(v).max() * 4 / min(G2.h) ** 2
        assert abs(np.sum(w * div.values)) <= 1e-12 * scale


def test_weighted_laplacian_is_symmetric():
    W = np.diag(G2.spatial_weights().ravel())
    WL = W @ ops.laplacian_matrix(G2).toarray()
    assert np.allclose(WL, WL.T, atol=1e-12)


def test_laplacian_of_cosine_converges():
    errs = []
    for n in (17, 33, 65):
        g = build_grid((1.0, 1.0), 1.0, n, 2)
        u = ScalarField.from_function(g, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
        errs.append(np.abs(ops.laplacian(u).values + 2 * np.pi**2 * u.values).max())
    assert math.log2(errs[0] / errs[1]) > 1.9 and math.log2(errs[1] / errs[2]) > 1.9


def test_dirichlet_laplacian_of_sine():
    g = build_grid((1.0,), 1.0, 65, 2)
    u = ScalarField.from_function(g, lambda x: np.sin(np.pi * x))
    lap = ops.laplacian(u, "dirichlet")
    # leading truncation term of the three-point stencil: π⁴ h² / 12 · |sin|
    bound = np.pi**4 * g.h[0] ** 2 / 12
    assert np.abs(lap.values + np.pi**2 * u.values).max() <= 1.001 * bound


def test_free_closures_exact_for_quadratics():
    g = build_grid((1.0, 1.0), 1.0, (6, 5), 2)
    u = ScalarField.from_function(g, lambda x, y: x**2 + 3 * x * y - y**2)
    free = ops.BoundaryCondition.FREE
    assert np.allclose(ops.mixed_second(u, 0, 1, free).values, 3.0)
    assert np.allclose(ops.mixed_second(u, 0, 0, free).values, 2.0)
    assert np.allclose(ops.mixed_second(u, 1, 1, free).values, -2.0)
    x, y = g.coords()
    assert np.allclose(ops.gradient(u, free)[0].values, 2 * x + 3 * y)


def test_time_derivative_exact_for_quadratic_in_time():
    g = build_grid((1.0,), 2.0, 5, 6)
    u = ScalarField.from_function(g, lambda t, x: t**2 + x, spacetime=True)
    t, _ = g.spacetime_coords()
    assert np.allclose(ops.time_derivative(u).values, 2 * t)


def test_normal_derivative_of_polynomial():
    g = build_grid((1.0,), 1.0, 9, 2)
    u = ScalarField.from_function(g, lambda x: x**2 + 0.5 * x)
    nd = ops.normal_derivative(u)
    # outward: -u'(-1) = 1.5 and u'(1) = 2.5
    assert nd[(0, -1)] == pytest.approx(1.5)
    assert nd[(0, 1)] == pytest.approx(2.5)


def test_upwind_takes_value_from_upstream_node():
    g = build_grid((1.0,), 1.0, 5, 2)
    x = g.axes[0]
    m = np.arange(5.0)
    up = ops.face_flux(m, x, np.ones(5), g, 0, "upwind")
    down = ops.face_flux(m, -x, np.ones(5), g, 0, "upwind")
    assert np.allclose(up, m[:-1])
    assert np.allclose(down, -m[1:])
    with pytest.raises(ValueError, match="unknown flux scheme"):
        ops.face_flux(m, x, np.ones(5), g, 0, "lax")


def test_spacetime_application_is_slicewise():
    g = build_grid((1.0,), 1.0, 7, 3)
    u = ScalarField.from_function(g, lambda t, x: (1 + t) * np.cos(np.pi * x), spacetime=True)
    lap = ops.laplacian(u)
    for k in range(4):
        assert np.allclose(lap.values[k], ops.laplacian(u.slice_at(k)).values)
