import math

import numpy as np
import pytest

from retromfg.forward import (
    AprioriBounds,
    CFLViolation,
    InteractionSpec,
    KernelSpec,
    MfgProblem,
    PicardDiverged,
    SolutionPair,
    SolverError,
    check_bounds,
    picard_solve,
    residual_arrays,
    solve_bellman_backward,
    solve_fokker_planck_forward,
    system_residual,
    unit_mass,
)
from retromfg.grid import ScalarField, build_grid, integrate

from conftest import weak_coupling_problem


def _problem(g, *, kappa=1.0, v_T=None, m_0=None, **kw):
    v_T = v_T if v_T is not None else ScalarField.zeros(g)
    m_0 = m_0 if m_0 is not None else ScalarField(g, np.full(g.shape, 1 / g.domain.volume))
    return MfgProblem(g, kw.pop("beta", 1.0), ScalarField(g, np.full(g.shape, kappa)), v_T, m_0, **kw)


def test_constant_terminal_value_stays_constant():
    g = build_grid((1.0, 1.0), 1.0, 9, 8)
    p = _problem(g, kappa=0.0, v_T=ScalarField(g, np.full(g.shape, 3.5)))
    v = solve_bellman_backward(ScalarField.zeros(g, spacetime=True), p)
    assert np.allclose(v.values, 3.5, atol=1e-13, rtol=0)


def test_uniform_density_is_stationary():
    g = build_grid((1.0, 1.0), 1.0, 9, 8)
    p = _problem(g)
    m = solve_fokker_planck_forward(ScalarField(g, np.full(g.spacetime_shape, 2.0)), p)
    assert np.allclose(m.values, 0.25, atol=1e-14, rtol=0)


def _heat_errors(nodes_steps):
    """Max errors of the Bellman and Fokker-Planck heat modes on joint refinements."""
    ev, em = [], []
    for n, steps in nodes_steps:
        g = build_grid((1.0,), 1.0, n, steps)
        t, (x,) = g.spacetime_coords()
        p = _problem(g, kappa=0.0, v_T=ScalarField.from_function(g, lambda x: np.cos(np.pi * x)),
                     m_0=ScalarField.from_function(g, lambda x: 0.5 + 0.1 * np.cos(np.pi * x)))
        v = solve_bellman_backward(ScalarField.zeros(g, spacetime=True), p)
        ev.append(np.abs(v.values - np.exp(-np.pi**2 * (1 - t)) * np.cos(np.pi * x)).max())
        m = solve_fokker_planck_forward(ScalarField.zeros(g, spacetime=True), p)
        em.append(np.abs(m.values - (0.5 + 0.1 * np.exp(-np.pi**2 * t) * np.cos(np.pi * x))).max())
    return ev, em


def test_heat_modes_converge():
    # 9 nodes is still pre-asymptotic (observed order 1.78); start at 17
    ev, em = _heat_errors([(17, 64), (33, 256), (65, 1024)])
    for e in (ev, em):
        assert math.log2(e[0] / e[1]) > 1.8 and math.log2(e[1] / e[2]) > 1.8


def test_mass_is_conserved_and_density_stays_nonnegative():
    p = weak_coupling_problem(33, 33)
    pair = picard_solve(p)
    masses = np.array([integrate(pair.m, time_index=k) for k in range(34)])
    assert np.abs(masses - masses[0]).max() <= 1e-12
    assert pair.m.values.min() >= -1e-12


def manufactured_errors(nodes_steps, T=1.0):
    """Bellman errors against v* = (1 + t²/2)·cos(πx)/2 with matching source."""
    out = []
    for n, steps in nodes_steps:
        g = build_grid((1.0,), T, n, steps)
        t, (x,) = g.spacetime_coords()
        amp = 1 + t**2 / 2
        vs = 0.5 * amp * np.cos(np.pi * x)
        vs_t = 0.5 * t * np.cos(np.pi * x)
        vs_xx = -np.pi**2 * vs
        vs_x = -0.5 * np.pi * amp * np.sin(np.pi * x)
        m0 = unit_mass(ScalarField.from_function(g, lambda x: 1 + 0.5 * np.cos(np.pi * x)))
        m = np.broadcast_to(m0.values, g.spacetime_shape)
        inter = InteractionSpec(0.2, 0.1, 1.0, 1.0)
        kern = KernelSpec(0.5, 0.5)
        beta = 0.3
        coupling = inter.coupling(kern.apply(m, g), m)
        g0 = -(vs_t + beta * vs_xx + 0.5 * vs_x**2 + coupling)
        inter = InteractionSpec(0.2, 0.1, 1.0, 1.0, ScalarField(g, g0))
        p = MfgProblem(g, beta, ScalarField(g, np.ones(g.shape)), ScalarField(g, vs[-1]), m0, inter, kern)
        v = solve_bellman_backward(ScalarField(g, m), p)
        out.append(np.abs(v.values - vs).max())
    return out


def test_manufactured_bellman_orders():
    eh = manufactured_errors([(9, 16), (17, 64), (33, 256)])
    assert min(math.log2(eh[0] / eh[1]), math.log2(eh[1] / eh[2])) >= 1.8
    et = manufactured_errors([(129, 8), (129, 16), (129, 32)])
    assert min(math.log2(et[0] / et[1]), math.log2(et[1] / et[2])) >= 0.9


def test_cfl_guard():
    g = build_grid((1.0,), 1.0, 33, 4)
    p = _problem(g, m_0=unit_mass(ScalarField(g, np.ones(g.shape))))
    t, (x,) = g.spacetime_coords()
    steep = ScalarField(g, 5 * np.cos(np.pi * x) + 0 * t)
    with pytest.raises(CFLViolation, match="CFL number"):
        solve_fokker_planck_forward(steep, p)
    m = solve_fokker_planck_forward(steep, p.replace(allow_cfl_violation=True))
    assert abs(integrate(m, time_index=-1) - 1.0) < 1e-12


def test_decoupled_picard_stops_after_second_sweep():
    p = weak_coupling_problem(17, 16, interaction=InteractionSpec(), kernel=KernelSpec())
    pair = picard_solve(p, damping=1.0)
    assert pair.picard_iterations <= 2
    assert pair.final_update_norm == 0.0


def test_damping_does_not_move_the_fixed_point():
    p = weak_coupling_problem(17, 16)
    a = picard_solve(p, damping=1.0, tol=1e-11)
    b = picard_solve(p, damping=0.5, tol=1e-11)
    assert np.abs(a.m.values - b.m.values).max() < 1e-9
    assert np.abs(a.v.values - b.v.values).max() < 1e-9
    assert max(b.contraction_ratios) < 1


def test_picard_divergence_is_reported():
    p = weak_coupling_problem(17, 16)
    with pytest.raises(PicardDiverged, match="picard-diverged") as info:
        picard_solve(p, max_iter=2)
    assert len(info.value.trace) == 2


def test_cg_matches_direct():
    p = weak_coupling_problem(17, 16)
    m = ScalarField(p.grid, np.broadcast_to(p.m_0.values, p.grid.spacetime_shape))
    a = solve_bellman_backward(m, p)
    b = solve_bellman_backward(m, p.replace(linear_solver="cg"))
    assert np.abs(a.values - b.values).max() < 1e-8


def test_non_finite_march_aborts_with_step():
    p = weak_coupling_problem(17, 16, interaction=InteractionSpec(1e300, 0.0, 1e-300, 1.0))
    m = ScalarField(p.grid, np.broadcast_to(p.m_0.values, p.grid.spacetime_shape))
    with np.errstate(all="ignore"), pytest.raises(SolverError, match="time step"):
        solve_bellman_backward(m, p)


def test_zero_problem_has_zero_residual():
    g = build_grid((1.0,), 1.0, 9, 8)
    p = _problem(g, m_0=ScalarField.zeros(g), require_unit_mass=False)
    z = ScalarField.zeros(g, spacetime=True)
    assert system_residual(SolutionPair(z, z), p) == (0.0, 0.0)


def test_residual_grows_linearly_with_perturbation(small_problem, small_truth):
    g = small_problem.grid
    bump = ScalarField.from_function(g, lambda t, x: np.sin(np.pi * t) * np.cos(np.pi * x), spacetime=True).values
    r0 = residual_arrays(small_truth.v.values, small_truth.m.values, small_problem)
    incs = []
    for eps in (1e-4, 2e-4, 4e-4):
        r = residual_arrays(small_truth.v.values + eps * bump, small_truth.m.values + eps * bump, small_problem)
        incs.append(sum(np.linalg.norm(a - b) for a, b in zip(r, r0)))
    assert incs[1] / incs[0] == pytest.approx(2, rel=0.01)
    assert incs[2] / incs[1] == pytest.approx(2, rel=0.01)


def test_bounds_membership():
    g = build_grid((1.0,), 1.0, 9, 8)
    z = ScalarField.zeros(g, spacetime=True)
    rep = check_bounds(SolutionPair(z, z), AprioriBounds(1, 1, 1, 1))
    assert rep.v_in_B3 and rep.m_in_B4
    M3 = 0.7
    rep = check_bounds(SolutionPair(ScalarField(g, np.full(g.spacetime_shape, 2 * M3)), z), AprioriBounds(1, 1, M3, 1))
    assert not rep.v_in_B3 and rep.sup_v == 2 * M3
    assert AprioriBounds(1, 5, 2, 3).M == 5
    with pytest.raises(ValueError):
        AprioriBounds(0, 1, 1, 1)


def test_problem_validation():
    g = build_grid((1.0,), 1.0, 9, 8)
    x = g.coords()[0]
    with pytest.raises(ValueError, match="unit mass"):
        _problem(g, m_0=ScalarField(g, np.ones(g.shape)))
    with pytest.raises(ValueError, match="non-negative"):
        _problem(g, m_0=ScalarField(g, np.cos(np.pi * x)), require_unit_mass=False)
    with pytest.raises(ValueError, match="neumann"):
        _problem(g, v_T=ScalarField(g, x))
    with pytest.raises(ValueError, match="beta"):
        _problem(g, beta=0.0)
    with pytest.raises(ValueError, match="linear_solver"):
        _problem(g, linear_solver="gmres")


def test_recorded_constants():
    p = weak_coupling_problem(33, 8)
    assert p.interaction.Fy_bound == 0.1 and p.interaction.Fz_bound == 0.1
    assert p.kernel.sup == 0.5
    assert p.kappa_C1 == pytest.approx(1.0)
    assert p.M2_recorded == pytest.approx(1.0)
