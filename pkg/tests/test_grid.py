import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retromfg.grid import FieldKind, NormKind, PrismDomain, ScalarField, build_grid, integrate, norm


def test_grid_validation():
    with pytest.raises(ValueError, match="at least 3 nodes"):
        build_grid((1.0,), 1.0, 2, 4)
    with pytest.raises(ValueError, match="time horizon"):
        build_grid((1.0,), 0.0, 5, 4)
    with pytest.raises(ValueError, match="half widths"):
        build_grid((-1.0,), 1.0, 5, 4)
    with pytest.raises(ValueError, match="node counts"):
        build_grid((1.0, 1.0), 1.0, (5,), 4)


def test_geometry():
    g = build_grid((1.0, 2.0), 0.5, (5, 9), 10)
    assert g.h == (0.5, 0.5)
    assert g.dt == 0.05
    assert g.spacetime_shape == (11, 5, 9)
    assert PrismDomain((1.0, 2.0)).volume == 8.0
    assert g.boundary_mask().sum() == 5 * 9 - 3 * 7
    assert g.axes[1][0] == -2.0 and g.axes[1][-1] == 2.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_trapezoid_exact_for_bilinear(a, b, c, d):
    g = build_grid((1.0, 0.5), 1.0, (7, 4), 2)
    f = ScalarField.from_function(g, lambda x, y: a + b * x + c * y + d * x * y)
    assert integrate(f) == pytest.approx(a * g.domain.volume, abs=1e-12)


def test_quadrature_converges_second_order():
    errs = []
    for n in (17, 33, 65):
        g = build_grid((1.0,), 1.0, n, 2)
        errs.append(abs(integrate(ScalarField.from_function(g, lambda x: x**2)) - 2 / 3))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2, abs=0.05)
    assert math.log2(errs[1] / errs[2]) == pytest.approx(2, abs=0.05)


def test_spacetime_integral():
    g = build_grid((1.0,), 2.0, 9, 8)
    f = ScalarField.from_function(g, lambda t, x: t + 0 * x, spacetime=True)
    assert integrate(f, "QT") == pytest.approx(2.0 * 2.0**2 / 2)
    assert integrate(f, "Omega", time_index=-1) == pytest.approx(4.0)
    with pytest.raises(ValueError, match="time_index"):
        integrate(f)


def test_norms_of_cosine():
    # ∫cos² = 1 and ∫π² sin² = π² on (-1, 1)
    g = build_grid((1.0,), 1.0, 257, 2)
    u = ScalarField.from_function(g, lambda x: np.cos(np.pi * x))
    assert norm(u, NormKind.L2_OMEGA) == pytest.approx(1.0, rel=1e-4)
    assert norm(u, NormKind.H1_OMEGA) == pytest.approx(math.sqrt(1 + math.pi**2), rel=1e-4)


def test_parabolic_norms_of_separable_field():
    # u = t cos(πx) on (-1,1) x (0,1): ∫u² = 1/3, ∫u_x² = π²/3, ∫u_t² = 1, ∫u_xx² = π⁴/3
    g = build_grid((1.0,), 1.0, 257, 64)
    u = ScalarField.from_function(g, lambda t, x: t * np.cos(np.pi * x), spacetime=True)
    assert norm(u, "L2_QT") == pytest.approx(math.sqrt(1 / 3), rel=1e-4)
    assert norm(u, "H10_QT") == pytest.approx(math.sqrt((1 + math.pi**2) / 3), rel=1e-4)
    assert norm(u, "H21_QT") == pytest.approx(math.sqrt((1 + math.pi**2 + math.pi**4) / 3 + 1), rel=1e-3)


def test_field_checks():
    g = build_grid((1.0,), 1.0, 5, 4)
    f = ScalarField(g, np.arange(5.0))
    assert f.kind is FieldKind.SPATIAL
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(ValueError, match="fits neither"):
        ScalarField(g, np.zeros(7))
    with pytest.raises(ValueError, match="finite"):
        ScalarField(g, np.full(5, np.nan))
    st_field = ScalarField.zeros(g, spacetime=True)
    assert st_field.slice_at(-1).kind is FieldKind.SPATIAL
    with pytest.raises(ValueError, match="spacetime"):
        norm(f, "H10_QT")
    assert np.array_equal((f * 2 - f).values, f.values)
