import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retromfg.carleman import (
    BoundaryComplianceError,
    CarlemanWeight,
    backward_estimate_terms,
    calibrate_constant,
    estimate_reports,
    forward_estimate_terms,
    verify_identity,
    weight_log_value,
)
from retromfg.families import cosine_family, cosine_mode
from retromfg.grid import ScalarField, build_grid

G1 = build_grid((1.0,), 1.0, 33, 32)
FAMILY = cosine_family(G1, 6, seed=3)
LAMS = [1.0, 2.0, 3.0]


def test_weight_values():
    w = CarlemanWeight(1.5, 3, 1.0, 2.0)
    assert weight_log_value(w, 0.5) == pytest.approx(2 * 1.5 * 2.5**3)
    assert w.normalized(1.0) == 1.0
    assert w.log_scale == pytest.approx(2 * 1.5 * 27)
    assert w.replace(sigma=2).log_scale == pytest.approx(2 * w.log_scale)
    with pytest.raises(ValueError, match="must lie in"):
        weight_log_value(w, 1.5)


@pytest.mark.parametrize("kw", [dict(lam=-1), dict(nu=2), dict(a=1), dict(sigma=3), dict(T=0)])
def test_weight_validation(kw):
    base = dict(lam=1, nu=3, T=1.0, a=2.0, sigma=1)
    base.update(kw)
    with pytest.raises(ValueError):
        CarlemanWeight(**base)


def test_identity_gap_closes_for_neumann_and_dirichlet():
    gaps = {"neumann": [], "dirichlet": []}
    for n in (17, 33, 65):
        g = build_grid((1.0, 1.0), 1.0, n, 2)
        x, y = g.coords()
        gaps["neumann"].append(verify_identity(ScalarField(g, np.cos(np.pi * x) * np.cos(np.pi * y))).relative_gap)
        s = ScalarField(g, np.sin(np.pi * x) * np.sin(np.pi * (y + 1) / 2))
        gaps["dirichlet"].append(verify_identity(s, "dirichlet").relative_gap)
    for seq in gaps.values():
        assert math.log2(seq[0] / seq[1]) > 1.8 and math.log2(seq[1] / seq[2]) > 1.8


def test_identity_rejects_non_compliant_field():
    g = build_grid((1.0, 1.0), 1.0, 17, 2)
    x, _ = g.coords()
    with pytest.raises(BoundaryComplianceError, match="x1="):
        verify_identity(ScalarField(g, x))
    with pytest.raises(BoundaryComplianceError, match="value"):
        verify_identity(ScalarField(g, np.cos(np.pi * x)), "dirichlet")


def test_estimate_terms_scale_out_the_weight():
    # a field constant in time: every weighted term is ∫φ̃ times the spatial integral
    u = ScalarField(G1, np.broadcast_to(cosine_mode(G1, (2,)), G1.spacetime_shape))
    w = CarlemanWeight(0.5, 3, 1.0)
    r = forward_estimate_terms(u, w, beta=1.0)
    phi_int = G1.time_weights() @ w.normalized(G1.times)
    # ∫u² = 1 and ∫|∇u|² = π² for cos(π(x+1)) on (-1, 1); centred differences
    # of a pure mode carry the symbol factor (sin(πh)/(πh))²
    h = G1.h[0]
    grad2 = math.pi**2 * (math.sin(math.pi * h) / (math.pi * h)) ** 2
    assert r.rhs_terms["zero_order"] == pytest.approx(0.25 * 9 * phi_int, rel=1e-12)
    assert r.rhs_terms["gradient"] == pytest.approx(0.5 * 3 * grad2 * phi_int, rel=1e-12)
    assert r.rhs_terms["boundary_T"] == pytest.approx(grad2 + 0.5 * 3 * 27, rel=1e-12)


def test_critical_C_matches_margin_root():
    u = FAMILY[0]
    for rep in (forward_estimate_terms(u, CarlemanWeight(2, 3, 1.0), 1.0),
                backward_estimate_terms(u, CarlemanWeight(2, 3, 1.0), 1.0)):
        c = rep.critical_C()
        if math.isfinite(c):
            assert abs(rep.margin(c)) <= 1e-9 * (abs(rep.lhs) + sum(map(abs, rep.rhs_terms.values())))


@pytest.mark.parametrize("which", ["forward", "forward_prism", "backward"])
def test_member_bisection_matches_closed_form(which):
    cal = calibrate_constant(which, FAMILY, LAMS, 3, 1.0, certify="members", rel_tol=1e-6)
    closed = min(r.critical_C() for _, r in estimate_reports(which, FAMILY, LAMS, 3, 1.0))
    if math.isfinite(closed):
        assert cal.C == pytest.approx(closed, rel=2e-6)
        assert cal.C <= closed


def test_span_certificate_is_stronger_than_members():
    span = calibrate_constant("forward", FAMILY, LAMS, 3, 1.0)
    members = calibrate_constant("forward", FAMILY, LAMS, 3, 1.0, certify="members")
    assert 0 < span.C <= members.C


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6).filter(lambda c: max(map(abs, c)) > 1e-3))
def test_span_certificate_covers_combinations(coeffs):
    cal = calibrate_constant("forward", FAMILY, LAMS, 3, 1.0)
    combo = sum((c * u for c, u in zip(coeffs, FAMILY)), ScalarField.zeros(G1, spacetime=True))
    for lam in LAMS:
        r = forward_estimate_terms(combo, CarlemanWeight(lam, 3, 1.0), 1.0)
        scale = r.lhs + sum(map(abs, r.rhs_terms.values()))
        assert r.margin(cal.C) >= -1e-8 * scale


def test_more_lambdas_never_raise_the_constant():
    both = calibrate_constant("forward", FAMILY, [1.0, 3.0], 3, 1.0)
    upper = calibrate_constant("forward", FAMILY, [3.0], 3, 1.0)
    assert both.C <= upper.C * (1 + 1e-3)
    starred = calibrate_constant("forward", FAMILY, [1.0, 3.0], 3, 1.0, lambda_star=3.0)
    assert starred.C == pytest.approx(upper.C)


def test_squared_weight_variant_can_fail():
    g = build_grid((1.0,), 1.0, 65, 64)
    u = ScalarField.from_function(g, lambda t, x: np.cos(np.pi * x) * t**2, spacetime=True)
    assert forward_estimate_terms(u, CarlemanWeight(1, 3, 1.0), 1.0).critical_C() > 0
    assert forward_estimate_terms(u, CarlemanWeight(1, 3, 1.0, sigma=2), 1.0).critical_C() < 0
    cal = calibrate_constant("forward", [u], [1.0], 3, 1.0, sigma=2)
    assert cal.violated and cal.C == 0.0


def test_degenerate_family_is_flagged():
    # constant in time and space: backward right side is negative for every C
    u = ScalarField(G1, np.ones(G1.spacetime_shape))
    cal = calibrate_constant("backward", [u], LAMS, 3, 1.0)
    assert cal.degenerate and cal.binding_member is None


def test_laplacian_and_mixed_forms_agree_on_prism():
    g = build_grid((1.0, 1.0), 1.0, 33, 16)
    u = cosine_family(g, 1, seed=5)[0]
    w = CarlemanWeight(2, 3, 1.0)
    a = forward_estimate_terms(u, w, 1.0, "laplacian_form").rhs_terms["principal"]
    b = forward_estimate_terms(u, w, 1.0, "mixed_form").rhs_terms["principal"]
    assert a == pytest.approx(b, rel=2e-2)
    with pytest.raises(ValueError, match="variant"):
        forward_estimate_terms(u, w, 1.0, "other")


def test_calibration_rows_and_summary():
    cal = calibrate_constant("backward", FAMILY[:2], LAMS, 4, 1.0)
    rows = cal.rows()
    assert len(rows) == 2 * len(LAMS)
    assert {"member", "lhs", "rhs_boundary_0", "calibrated_C", "margin"} <= set(rows[0])
    assert cal.summary()["certify"] == "span"
    with pytest.raises(ValueError, match="certify"):
        calibrate_constant("forward", FAMILY, LAMS, 3, 1.0, certify="all")
