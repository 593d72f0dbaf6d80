"""
Forward mean-field-games solver.

Bellman (backward in time) and Fokker-Planck (forward in time) equations

    v_t + βΔv + κ²|∇v|²/2 + F(x, t, ∫K(x,y)m(y,t)dy, m) = 0,   v(·,T) = v_T
    m_t - βΔm + ∇·(κ² m ∇v) = 0,                                m(·,0) = m_0

with zero Neumann data, coupled by damped Picard iteration. Both marches are
IMEX: implicit diffusion, explicit Hamiltonian, interaction and advection.
The diffusion matrix ``I - Δt β L`` is the same for both equations and every
step, so it is factorised once per problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import ops
from .carleman import check_compliance
from .grid import NormKind, ScalarField, SpaceTimeGrid, integrate, norm

logger = logging.getLogger(__name__)

__all__ = [
    "InteractionSpec",
    "KernelSpec",
    "AprioriBounds",
    "MfgProblem",
    "SolutionPair",
    "BoundsReport",
    "SolverError",
    "CFLViolation",
    "PicardDiverged",
    "solve_bellman_backward",
    "solve_fokker_planck_forward",
    "picard_solve",
    "system_residual",
    "residual_arrays",
    "check_bounds",
    "unit_mass",
]


class SolverError(RuntimeError):
    """Linear solve failure or non-finite values during a march."""


class CFLViolation(SolverError):
    """Explicit advection step exceeds the CFL limit."""


class PicardDiverged(SolverError):
    """Picard iteration hit ``max_iter``; ``trace`` holds the update norms."""

    def __init__(self, msg: str, trace: list[float]):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class InteractionSpec:
    """``F(x,t,y,z) = g0(x,t) + c1 tanh(y/s1) + c2 tanh(z/s2)``.

    ``y`` is the nonlocal average ``∫K(x,y)m(y,t)dy`` and ``z = m(x,t)``.
    ``g0`` exists for manufactured solutions.
    """

    c1: float = 0.0
    c2: float = 0.0
    s1: float = 1.0
    s2: float = 1.0
    g0: ScalarField | None = None

    def __post_init__(self):
        if self.s1 <= 0 or self.s2 <= 0:
            raise ValueError("interaction scales s1, s2 must be positive")
        if self.g0 is not None and not self.g0.is_spacetime:
            raise ValueError("g0 must be a spacetime field")

    @property
    def Fy_bound(self) -> float:
        return abs(self.c1) / self.s1

    @property
    def Fz_bound(self) -> float:
        return abs(self.c2) / self.s2

    def coupling(self, y, z):
        """``F - g0``."""
        return self.c1 * np.tanh(y / self.s1) + self.c2 * np.tanh(z / self.s2)

    def derivatives(self, y, z):
        """``(∂F/∂y, ∂F/∂z)``."""
        fy = self.c1 / self.s1 / np.cosh(y / self.s1) ** 2
        fz = self.c2 / self.s2 / np.cosh(z / self.s2) ** 2
        return fy, fz

    def source(self, k=None):
        if self.g0 is None:
            return 0.0
        return self.g0.values if k is None else self.g0.values[k]


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel ``K(x,y) = k0 exp(-|x-y|²/(2σ_k²))``."""

    k0: float = 0.0
    sigma_k: float = 1.0

    def __post_init__(self):
        if self.sigma_k <= 0:
            raise ValueError("sigma_k must be positive")

    @property
    def sup(self) -> float:
        return abs(self.k0)

    def matrix(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Dense quadrature matrix ``Kq[i, j] = K(x_i, x_j) w_j``."""
        return _kernel_matrix(grid, float(self.k0), float(self.sigma_k))

    def apply(self, m: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
        """``∫K(x,y)m(y)dy`` for a spatial or spacetime array."""
        Kq = self.matrix(grid)
        flat = np.asarray(m).reshape(-1, grid.n_spatial)
        return (flat @ Kq.T).reshape(np.shape(m))


@lru_cache(maxsize=16)
def _kernel_matrix(grid: SpaceTimeGrid, k0: float, sigma_k: float) -> np.ndarray:
    pts = np.stack([c.ravel() for c in grid.coords()], axis=1)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    Kq = k0 * np.exp(-d2 / (2 * sigma_k**2)) * grid.spatial_weights().ravel()[None, :]
    Kq.flags.writeable = False
    return Kq


@dataclass(frozen=True)
class AprioriBounds:
    """Bounds ``M1..M4``; ``M`` is their maximum."""

    M1: float
    M2: float
    M3: float
    M4: float

    def __post_init__(self):
        for k in ("M1", "M2", "M3", "M4"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    @property
    def M(self) -> float:
        return max(self.M1, self.M2, self.M3, self.M4)


def unit_mass(m0: ScalarField) -> ScalarField:
    """Rescale a non-negative spatial field to unit integral."""
    mass = integrate(m0)
    if mass <= 0:
        raise ValueError("cannot normalise a field with non-positive mass")
    return m0 * (1.0 / mass)


@dataclass(frozen=True, eq=False)
class MfgProblem:
    """Data and coefficients of one forward problem.

    ``m_0`` must be non-negative; with ``require_unit_mass`` (the default) it
    must also integrate to one. ``linear_solver`` is ``"direct"`` (sparse LU,
    exact mass balance) or ``"cg"`` (conjugate gradients on the symmetrised
    system to relative residual 1e-10).
    """

    grid: SpaceTimeGrid
    beta: float
    kappa: ScalarField
    v_T: ScalarField
    m_0: ScalarField
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    require_unit_mass: bool = True
    linear_solver: str = "direct"
    allow_cfl_violation: bool = False
    kappa_expr: str | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("kappa", "v_T", "m_0"):
            f = getattr(self, name)
            if f.grid != self.grid or f.is_spacetime:
                raise ValueError(f"{name} must be a spatial field on the problem grid")
        if self.interaction.g0 is not None and self.interaction.g0.grid != self.grid:
            raise ValueError("g0 lives on a different grid")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"linear_solver must be 'direct' or 'cg', got {self.linear_solver!r}")
        if self.m_0.values.min() < -1e-12:
            raise ValueError(f"m_0 must be non-negative (min {self.m_0.values.min():.3e})")
        if self.require_unit_mass and abs(integrate(self.m_0) - 1.0) > 1e-10:
            raise ValueError(f"m_0 must have unit mass, got {integrate(self.m_0):.12g}; see unit_mass()")
        check_compliance(self.v_T, ops.BoundaryCondition.NEUMANN0)
        check_compliance(self.m_0, ops.BoundaryCondition.NEUMANN0)

    @property
    def kappa2(self) -> np.ndarray:
        return self.kappa.values**2

    @property
    def kappa_C1(self) -> float:
        """``sup|κ| + Σ sup|∂_i κ|``, recorded as a contribution to M2."""
        grads = ops.gradient(self.kappa, ops.BoundaryCondition.FREE)
        return float(np.abs(self.kappa.values).max() + sum(np.abs(g.values).max() for g in grads))

    @property
    def M2_recorded(self) -> float:
        return max(self.kappa_C1, self.kernel.sup)

    def replace(self, **kw) -> "MfgProblem":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return MfgProblem(**d)

    def interaction_terms(self, m: np.ndarray) -> np.ndarray:
        """``F - g0`` on a spatial or spacetime density array."""
        return self.interaction.coupling(self.kernel.apply(m, self.grid), m)


@dataclass
class SolutionPair:
    v: ScalarField
    m: ScalarField
    picard_iterations: int = 0
    final_update_norm: float = 0.0
    residual_norms: tuple[float, float] = (math.nan, math.nan)
    update_trace: list[float] = field(default_factory=list)

    @property
    def contraction_ratios(self) -> list[float]:
        t = self.update_trace
        return [b / a for a, b in zip(t, t[1:]) if a > 0]


class _Diffusion:
    """Solver for ``(I - Δt β L) x = b`` on one grid."""

    def __init__(self, problem: MfgProblem):
        g = problem.grid
        L = ops.laplacian_matrix(g)
        self.A = (sp.identity(g.n_spatial, format="csr") - g.dt * problem.beta * L).tocsc()
        self.method = problem.linear_solver
        if self.method == "direct":
            self._lu = spla.splu(self.A)
        else:
            # W A is symmetric positive definite for the Neumann Laplacian
            self.W = g.spatial_weights().ravel()
            self.WA = (sp.diags(self.W) @ self.A).tocsr()

    def solve(self, b: np.ndarray, step: int) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(b)
        x, info = spla.cg(self.WA, self.W * b, x0=b, rtol=1e-10, atol=0.0, maxiter=10 * b.size)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge at step {step} (info={info})")
        return x


def _check_finite(x: np.ndarray, what: str, step: int):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what}: non-finite values at time step {step}")


def solve_bellman_backward(m: ScalarField, problem: MfgProblem) -> ScalarField:
    """March the Bellman equation from ``v_T`` at t = T down to t = 0.

    Step ``k+1 -> k`` solves ``(I - Δt β L) v^k = v^{k+1} + Δt H^{k+1}`` with
    ``H = κ²|∇v|²/2 + F``.
    """
    g = problem.grid
    if m.grid != g or not m.is_spacetime:
        raise ValueError("m must be a spacetime field on the problem grid")
    diff = _Diffusion(problem)
    k2 = problem.kappa2.ravel()
    D = [ops.axis_d1(g, i) for i in range(g.dim)]
    mflat = m.values.reshape(g.time_steps + 1, -1)
    coupling = problem.interaction_terms(mflat)
    src = problem.interaction.source()
    src = np.broadcast_to(src, g.spacetime_shape).reshape(mflat.shape)
    v = np.empty_like(mflat)
    v[-1] = problem.v_T.values.ravel()
    for k in range(g.time_steps - 1, -1, -1):
        grad2 = sum((Di @ v[k + 1]) ** 2 for Di in D)
        rhs = v[k + 1] + g.dt * (0.5 * k2 * grad2 + coupling[k + 1] + src[k + 1])
        v[k] = diff.solve(rhs, k)
        _check_finite(v[k], "Bellman march", k)
    return ScalarField(g, v.reshape(g.spacetime_shape))


def cfl_number(v_slice: np.ndarray, problem: MfgProblem) -> float:
    """``Δt Σ_i max|κ² ∂_i v| / h_i`` on the faces."""
    g = problem.grid
    out = 0.0
    for axis in range(g.dim):
        dface, avg, _ = ops.flux_matrices(g, axis)
        vel = (avg @ problem.kappa2.ravel()) * (dface @ v_slice)
        out += np.abs(vel).max(initial=0.0) / g.h[axis]
    return g.dt * out


def solve_fokker_planck_forward(v: ScalarField, problem: MfgProblem) -> ScalarField:
    """March the Fokker-Planck equation from ``m_0``.

    Step ``k -> k+1`` solves ``(I - Δt β L) m^{k+1} = m^k - Δt Div_up(m^k, v^k)``
    with the upwind conservative flux, so the trapezoidal mass is preserved
    exactly up to round-off.
    """
    g = problem.grid
    if v.grid != g or not v.is_spacetime:
        raise ValueError("v must be a spacetime field on the problem grid")
    diff = _Diffusion(problem)
    vflat = v.values.reshape(g.time_steps + 1, -1)
    k2 = problem.kappa2
    m = np.empty_like(vflat)
    m[0] = problem.m_0.values.ravel()
    for k in range(g.time_steps):
        c = cfl_number(vflat[k], problem)
        if c > 1.0:
            msg = f"CFL number {c:.3f} > 1 at step {k}"
            logger.warning(msg)
            if not problem.allow_cfl_violation:
                raise CFLViolation(msg + "; refine the time step or set allow_cfl_violation")
        div = ops.divergence_array(m[k], vflat[k], k2, g, "upwind").ravel()
        m[k + 1] = diff.solve(m[k] - g.dt * div, k)
        _check_finite(m[k + 1], "Fokker-Planck march", k + 1)
    return ScalarField(g, m.reshape(g.spacetime_shape))


def residual_arrays(v: np.ndarray, m: np.ndarray, problem: MfgProblem) -> tuple[np.ndarray, np.ndarray]:
    """Centred discrete residuals ``(R1, R2)`` as flat ``(Nt+1, N)`` arrays."""
    g = problem.grid
    nt = g.time_steps + 1
    v = np.asarray(v).reshape(nt, -1)
    m = np.asarray(m).reshape(nt, -1)
    Dt = ops.time_d1(g)
    L = ops.laplacian_matrix(g)
    k2 = problem.kappa2.ravel()
    grad2 = sum(((ops.axis_d1(g, i) @ v.T).T) ** 2 for i in range(g.dim))
    src = np.broadcast_to(problem.interaction.source(), g.spacetime_shape).reshape(nt, -1)
    r1 = Dt @ v + problem.beta * (L @ v.T).T + 0.5 * k2 * grad2 + problem.interaction_terms(m) + src
    div = ops.divergence_array(m, v, problem.kappa2, g, "centered").reshape(nt, -1)
    r2 = Dt @ m - problem.beta * (L @ m.T).T + div
    return r1, r2


def system_residual(pair: SolutionPair, problem: MfgProblem) -> tuple[float, float]:
    """``(‖R1‖, ‖R2‖)`` in L²(Q_T) with centred operators."""
    r1, r2 = residual_arrays(pair.v.values, pair.m.values, problem)
    g = problem.grid
    return (
        norm(ScalarField(g, r1.reshape(g.spacetime_shape)), NormKind.L2_QT),
        norm(ScalarField(g, r2.reshape(g.spacetime_shape)), NormKind.L2_QT),
    )


def picard_solve(problem: MfgProblem, damping: float = 0.5, tol: float = 1e-8, max_iter: int = 200) -> SolutionPair:
    """Damped Picard iteration on the density.

    Each sweep solves Bellman with the current density, then Fokker-Planck
    with the new value function. The stopping quantity is the fixed-point
    residual ``sup|m_new - m|``; the density is then relaxed to
    ``θ m_new + (1-θ) m``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol and max_iter must be positive")
    g = problem.grid
    m = ScalarField(g, np.broadcast_to(problem.m_0.values, g.spacetime_shape))
    trace: list[float] = []
    for it in range(1, max_iter + 1):
        v = solve_bellman_backward(m, problem)
        m_new = solve_fokker_planck_forward(v, problem)
        change = float(np.abs(m_new.values - m.values).max())
        trace.append(change)
        logger.debug("picard %d: update %.3e", it, change)
        if change <= tol:
            pair = SolutionPair(v, m_new, it, change, update_trace=trace)
            pair.residual_norms = system_residual(pair, problem)
            if len(trace) > 2:
                logger.info("picard converged in %d iterations; contraction ratios %s", it, pair.contraction_ratios)
            return pair
        m = m_new if damping == 1 else m_new * damping + m * (1 - damping)
    raise PicardDiverged(f"picard-diverged: no convergence to {tol:g} in {max_iter} iterations (last update {trace[-1]:.3e})", trace)


@dataclass(frozen=True)
class BoundsReport:
    sup_v: float
    sup_grad_v: float
    sup_lap_v: float
    sup_m: float
    sup_grad_m: float
    v_in_B3: bool
    m_in_B4: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _sup_grad(u: ScalarField) -> float:
    gs = ops.gradient(u, ops.BoundaryCondition.FREE)
    return float(np.sqrt(sum(gi.values**2 for gi in gs)).max())


def check_bounds(pair: SolutionPair, bounds: AprioriBounds) -> BoundsReport:
    """Attained suprema over Q_T and membership in B3(M3) x B4(M4)."""
    v, m = pair.v, pair.m
    sv, sgv = float(np.abs(v.values).max()), _sup_grad(v)
    slv = float(np.abs(ops.laplacian(v, ops.BoundaryCondition.FREE).values).max())
    sm, sgm = float(np.abs(m.values).max()), _sup_grad(m)
    M3, M4 = bounds.M3, bounds.M4
    return BoundsReport(sv, sgv, slv, sm, sgm, max(sv, sgv, slv) <= M3, max(sm, sgm) <= M4)
