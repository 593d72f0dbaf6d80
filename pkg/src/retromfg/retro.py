"""
Retrospective reconstruction: recover ``(v, m)`` on the whole cylinder from
``v(·,T)``, ``m(·,0)`` and the extra terminal density ``m(·,T)``.

The unknowns are the nodal values of both fields. The objective is a sum of
squares ``J = ‖r‖²`` where ``r`` stacks the Carleman-weighted discrete
residuals of the two equations and three data misfits:

    J = ∫ R1² φ̃ + ∫ R2² φ̃ + α_vT ‖v(T) - v_T‖²_H1 + α_m0 ‖m(0) - m_0‖²_H1
        + α_mT ‖m(T) - m_T‖²_L2

The Jacobian of ``r`` is assembled exactly from the sparse stencil matrices,
so ``∇J = 2 Jacᵀ r`` is the derivative of the discrete functional itself.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from . import ops
from .carleman import CarlemanWeight, check_compliance
from .families import random_cosine_series, random_spacetime_field
from .forward import AprioriBounds, MfgProblem, SolutionPair, check_bounds, picard_solve
from .grid import NormKind, ScalarField, norm

logger = logging.getLogger(__name__)

__all__ = [
    "RetrospectiveData",
    "WeightedObjective",
    "ReconstructionResult",
    "StabilitySweep",
    "UniquenessReport",
    "perturb_data",
    "objective_and_gradient",
    "reconstruct",
    "error_block",
    "data_norm",
    "stability_sweep",
    "uniqueness_check",
    "exact_data",
    "interpolant_init",
    "random_init",
    "measured_bounds",
]

ERROR_KEYS = ("v_block", "m_H10", "v_H21")


@dataclass(frozen=True, eq=False)
class RetrospectiveData:
    """Terminal value, initial density and terminal density."""

    v_T: ScalarField
    m_0: ScalarField
    m_T: ScalarField
    provenance: tuple = ("exact",)

    def __post_init__(self):
        g = self.v_T.grid
        for name in ("v_T", "m_0", "m_T"):
            f = getattr(self, name)
            if f.is_spacetime or f.grid != g:
                raise ValueError(f"{name} must be a spatial field on the common grid")
            check_compliance(f, ops.BoundaryCondition.NEUMANN0)
            if not math.isfinite(norm(f, NormKind.H1_OMEGA)):
                raise ValueError(f"{name} has no finite H1 norm")

    @property
    def grid(self):
        return self.v_T.grid


def exact_data(pair: SolutionPair) -> RetrospectiveData:
    """Data read off a forward solution."""
    return RetrospectiveData(pair.v.slice_at(-1), pair.m.slice_at(0), pair.m.slice_at(-1))


def data_norm(a: RetrospectiveData, b: RetrospectiveData) -> float:
    """``‖ṽ_T‖_H1 + ‖m̃_T‖_L2 + ‖m̃_0‖_H1`` for the data difference."""
    return (
        norm(a.v_T - b.v_T, NormKind.H1_OMEGA)
        + norm(a.m_T - b.m_T, NormKind.L2_OMEGA)
        + norm(a.m_0 - b.m_0, NormKind.H1_OMEGA)
    )


def perturb_data(exact: RetrospectiveData, delta: float, seed: int, *, max_mode: int = 6, decay: float = 2.0) -> RetrospectiveData:
    """Add cosine-series noise with each part scaled to norm ``delta``.

    ``v_T`` and ``m_0`` noise is measured in H1, ``m_T`` noise in L2, so each
    part contributes exactly ``delta`` to :func:`data_norm`.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return exact
    g = exact.grid
    rng = np.random.default_rng(seed)
    out = {}
    for name, kind in (("v_T", NormKind.H1_OMEGA), ("m_0", NormKind.H1_OMEGA), ("m_T", NormKind.L2_OMEGA)):
        noise = ScalarField(g, random_cosine_series(g, rng, max_mode=max_mode, decay=decay))
        out[name] = getattr(exact, name) + noise * (delta / norm(noise, kind))
    return RetrospectiveData(**out, provenance=("noisy", float(delta), int(seed)))


@dataclass(frozen=True, eq=False)
class WeightedObjective:
    """Weight, penalty coefficients and the forward problem's coefficients."""

    problem: MfgProblem
    weight: CarlemanWeight
    alpha_vT: float
    alpha_m0: float
    alpha_mT: float

    def __post_init__(self):
        if min(self.alpha_vT, self.alpha_m0, self.alpha_mT) <= 0:
            raise ValueError("penalty coefficients must be positive")
        if abs(self.weight.T - self.problem.grid.T) > 1e-12:
            raise ValueError("weight horizon differs from the grid horizon")

    @classmethod
    def default(cls, problem: MfgProblem, *, lam: float = 0.05, nu: float = 3.0, a: float = 2.0, alpha: float | None = None) -> "WeightedObjective":
        """Penalties default to ``1e3 ∫_{Q_T} φ̃`` (the residual scale)."""
        w = CarlemanWeight(lam, nu, problem.grid.T, a)
        if alpha is None:
            alpha = 1e3 * residual_scale(problem.grid, w)
        return cls(problem, w, alpha, alpha, alpha)

    def scaled(self, factor: float) -> "WeightedObjective":
        return replace(self, alpha_vT=self.alpha_vT * factor, alpha_m0=self.alpha_m0 * factor, alpha_mT=self.alpha_mT * factor)


def residual_scale(grid, weight: CarlemanWeight) -> float:
    phi = weight.normalized(grid.times)
    return float(grid.time_weights() @ phi * grid.domain.volume)


class _LeastSquares:
    """Residual vector and sparse Jacobian of the objective."""

    def __init__(self, data: RetrospectiveData, obj: WeightedObjective):
        p = obj.problem
        g = p.grid
        if data.grid != g:
            raise ValueError("data and problem live on different grids")
        self.p, self.g, self.data, self.obj = p, g, data, obj
        N, nt = g.n_spatial, g.time_steps + 1
        self.N, self.nt, self.n = N, nt, N * nt
        It = sp.identity(nt, format="csr")

        def lift(A):
            return sp.kron(It, A, format="csr")

        self.Dt = sp.kron(ops.time_d1(g), sp.identity(N), format="csr")
        self.L = lift(ops.laplacian_matrix(g))
        self.G = [lift(ops.axis_d1(g, i)) for i in range(g.dim)]
        self.K = lift(sp.csr_matrix(p.kernel.matrix(g))) if p.kernel.k0 != 0 else None
        self.k2 = np.tile(p.kappa2.ravel(), nt)
        self.flux = []
        for i in range(g.dim):
            dface, avg, div = ops.flux_matrices(g, i)
            self.flux.append((lift(dface), lift(avg), lift(div), np.tile(avg @ p.kappa2.ravel(), nt)))
        self.g0 = np.broadcast_to(p.interaction.source(), g.spacetime_shape).ravel()
        phi = obj.weight.normalized(g.times)
        self.sw = np.sqrt(g.spacetime_weights().ravel() * np.repeat(phi, N))
        # data misfit operators on a single slice
        w = g.spatial_weights().ravel()
        sq = np.sqrt(w)
        self.h1_ops = [sp.diags(sq)] + [sp.diags(sq) @ ops.axis_d1(g, i, ops.BoundaryCondition.FREE) for i in range(g.dim)]
        self.l2_ops = [sp.diags(sq)]
        self.data_vec = (data.v_T.values.ravel(), data.m_0.values.ravel(), data.m_T.values.ravel())

    # unknown layout: x = [v (nt*N), m (nt*N)], time-major
    def split(self, x):
        return x[: self.n], x[self.n:]

    def _select(self, k):
        S = sp.csr_matrix((np.ones(self.N), (np.arange(self.N), k * self.N + np.arange(self.N))), shape=(self.N, self.n))
        return S

    @cached_property
    def _data_blocks(self):
        """Linear data misfit rows ``(A_v, A_m, b)`` so that r_data = A_v v + A_m m - b."""
        o = self.obj
        ST, S0 = self._select(self.nt - 1), self._select(0)
        vT, m0, mT = self.data_vec
        rows_v, rows_m, rhs = [], [], []
        Z = sp.csr_matrix((self.N, self.n))
        for A in self.h1_ops:
            c = math.sqrt(o.alpha_vT)
            rows_v.append(c * A @ ST), rows_m.append(Z), rhs.append(c * (A @ vT))
        for A in self.h1_ops:
            c = math.sqrt(o.alpha_m0)
            rows_v.append(Z), rows_m.append(c * A @ S0), rhs.append(c * (A @ m0))
        for A in self.l2_ops:
            c = math.sqrt(o.alpha_mT)
            rows_v.append(Z), rows_m.append(c * A @ ST), rhs.append(c * (A @ mT))
        return sp.vstack(rows_v, format="csr"), sp.vstack(rows_m, format="csr"), np.concatenate(rhs)

    def pde_residuals(self, v, m):
        p = self.p
        Gv = [G @ v for G in self.G]
        Km = self.K @ m if self.K is not None else np.zeros_like(m)
        r1 = self.Dt @ v + p.beta * (self.L @ v) + 0.5 * self.k2 * sum(x * x for x in Gv) + p.interaction.coupling(Km, m) + self.g0
        r2 = self.Dt @ m - p.beta * (self.L @ m)
        for dface, avg, div, kf in self.flux:
            r2 = r2 + div @ (kf * (dface @ v) * (avg @ m))
        return r1, r2, Gv, Km

    def residual(self, x):
        v, m = self.split(x)
        r1, r2, _, _ = self.pde_residuals(v, m)
        Av, Am, b = self._data_blocks
        r = np.concatenate([self.sw * r1, self.sw * r2, Av @ v + Am @ m - b])
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite residual")
        return r

    def jacobian(self, x):
        p = self.p
        v, m = self.split(x)
        _, _, Gv, Km = self.pde_residuals(v, m)
        J11 = self.Dt + p.beta * self.L + sp.diags(self.k2) @ sum(sp.diags(gv) @ G for gv, G in zip(Gv, self.G))
        fy, fz = p.interaction.derivatives(Km, m)
        J12 = sp.diags(fz)
        if self.K is not None:
            J12 = J12 + sp.diags(fy) @ self.K
        J22 = self.Dt - p.beta * self.L
        J21 = sp.csr_matrix((self.n, self.n))
        for dface, avg, div, kf in self.flux:
            J22 = J22 + div @ sp.diags(kf * (dface @ v)) @ avg
            J21 = J21 + div @ sp.diags(kf * (avg @ m)) @ dface
        W = sp.diags(self.sw)
        Av, Am, _ = self._data_blocks
        return sp.bmat([[W @ J11, W @ J12], [W @ J21, W @ J22], [Av, Am]], format="csr")

    def value(self, x) -> float:
        r = self.residual(x)
        return float(r @ r)


def _pack(v: ScalarField, m: ScalarField) -> np.ndarray:
    return np.concatenate([v.values.ravel(), m.values.ravel()])


def objective_and_gradient(v: ScalarField, m: ScalarField, data: RetrospectiveData, obj: WeightedObjective):
    """``(J, (∂J/∂v, ∂J/∂m))`` with the gradient as spacetime fields."""
    ls = _LeastSquares(data, obj)
    x = _pack(v, m)
    r = ls.residual(x)
    grad = 2.0 * (ls.jacobian(x).T @ r)
    gv, gm = ls.split(grad)
    shape = ls.g.spacetime_shape
    return float(r @ r), (ScalarField(ls.g, gv.reshape(shape)), ScalarField(ls.g, gm.reshape(shape)))


def error_block(v_err: ScalarField, m_err: ScalarField) -> dict:
    """Error norms of a reconstruction difference.

    ``v_block = ‖∂_t ṽ‖ + ‖Δṽ‖ + ‖ṽ‖_H10``, ``m_H10 = ‖m̃‖_H10`` and
    ``v_H21 = ‖ṽ‖_H21``; derivatives use the one-sided closures of the norm
    module.
    """
    free = ops.BoundaryCondition.FREE
    dt = norm(ops.time_derivative(v_err), NormKind.L2_QT)
    lap = norm(ops.laplacian(v_err, free), NormKind.L2_QT)
    return dict(
        v_block=dt + lap + norm(v_err, NormKind.H10_QT),
        m_H10=norm(m_err, NormKind.H10_QT),
        v_H21=norm(v_err, NormKind.H21_QT),
    )


@dataclass
class ReconstructionResult:
    v_hat: ScalarField
    m_hat: ScalarField
    objective_trace: list[float]
    gradient_norm: float
    converged: bool
    iterations: int
    message: str
    errors: dict | None = None
    seconds: float = 0.0


def interpolant_init(data: RetrospectiveData) -> tuple[ScalarField, ScalarField]:
    """``v = v_T`` and ``m`` linear in time between ``m_0`` and ``m_T``."""
    g = data.grid
    s = (g.times / g.T).reshape((-1,) + (1,) * g.dim)
    v = np.broadcast_to(data.v_T.values, g.spacetime_shape)
    m = (1 - s) * data.m_0.values + s * data.m_T.values
    return ScalarField(g, v), ScalarField(g, m)


def reconstruct(
    data: RetrospectiveData,
    obj: WeightedObjective,
    init="interpolant",
    *,
    method: str = "gauss-newton",
    max_iter: int = 50,
    gtol: float = 1e-9,
    ftol: float = 1e-13,
    armijo: float = 1e-4,
    min_step: float = 1e-12,
    truth: SolutionPair | None = None,
    reference: tuple[ScalarField, ScalarField] | None = None,
) -> ReconstructionResult:
    """Minimise the weighted functional by descent with backtracking.

    ``method="gauss-newton"`` takes Levenberg-Marquardt directions from the
    exact sparse Jacobian; ``"gradient"`` takes steepest-descent directions.
    Every accepted step satisfies the Armijo sufficient-decrease condition,
    so the objective trace is non-increasing. Convergence means the gradient
    norm fell below ``gtol`` times its initial value, or the relative
    decrease of J fell below ``ftol``.

    ``init`` is ``"interpolant"`` or a ``(v, m)`` pair. With ``truth`` (and
    optionally ``reference``) the error block against those fields is
    attached.
    """
    t0 = time.perf_counter()
    if method not in ("gauss-newton", "gradient"):
        raise ValueError(f"unknown method {method!r}")
    ls = _LeastSquares(data, obj)
    if isinstance(init, str):
        if init != "interpolant":
            raise ValueError(f"unknown init {init!r}")
        init = interpolant_init(data)
    x = _pack(*init)
    r = ls.residual(x)
    f = float(r @ r)
    trace = [f]
    Jac = ls.jacobian(x)
    grad = 2.0 * (Jac.T @ r)
    g0 = max(np.linalg.norm(grad), np.finfo(float).tiny)
    mu = 1e-8
    converged, message, it = False, "iteration cap reached", 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= gtol * g0:
            converged, message, it = True, "gradient tolerance", it - 1
            break
        if method == "gauss-newton":
            H = (Jac.T @ Jac).tocsc()
            diag = H.diagonal()
            step = -spla.spsolve(H + mu * sp.diags(np.maximum(diag, 1e-300)), 0.5 * grad)
        else:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        s = 1.0
        while True:
            xn = x + s * step
            try:
                rn = ls.residual(xn)
                fn = float(rn @ rn)
            except FloatingPointError:
                fn = math.inf
            if fn <= f + armijo * s * slope:
                break
            s *= 0.5
            if s < min_step:
                break
        if s < min_step:
            message = f"line search failed at iteration {it} (step underflow)"
            it -= 1
            break
        mu = max(mu * 0.3, 1e-12) if s == 1.0 else min(mu * 10.0, 1e6)
        decrease = f - fn
        x, r, f = xn, rn, fn
        trace.append(f)
        Jac = ls.jacobian(x)
        grad = 2.0 * (Jac.T @ r)
        if decrease <= ftol * max(f, np.finfo(float).tiny) and method == "gauss-newton":
            converged, message = True, "objective stalled"
            break
    else:
        converged = np.linalg.norm(grad) <= gtol * g0
        if converged:
            message = "gradient tolerance"
    v, m = ls.split(x)
    shape = ls.g.spacetime_shape
    res = ReconstructionResult(
        ScalarField(ls.g, v.reshape(shape)), ScalarField(ls.g, m.reshape(shape)),
        trace, float(np.linalg.norm(grad)), bool(converged), it, message,
    )
    if truth is not None or reference is not None:
        res.errors = {}
        if truth is not None:
            res.errors.update({f"truth_{k}": e for k, e in error_block(res.v_hat - truth.v, res.m_hat - truth.m).items()})
        if reference is not None:
            res.errors.update(error_block(res.v_hat - reference[0], res.m_hat - reference[1]))
    res.seconds = time.perf_counter() - t0
    if not converged:
        logger.warning("reconstruction did not converge: %s", message)
    return res


@dataclass
class StabilitySweep:
    """Sweep table and per-norm log-log fits.

    Each row holds δ, seed, the data-side norm, the error norms against the
    exact-data reconstruction (``v_block``, ``m_H10``, ``v_H21``) and the
    same norms against the forward solution (``truth_*``).
    """

    delta_grid: list[float]
    seeds: list[int]
    rows: list[dict]
    fits: dict
    excluded: int
    measured_bounds: dict
    reference_errors: dict

    def summary(self) -> dict:
        return dict(
            delta_grid=self.delta_grid, seeds=self.seeds, fits=self.fits, excluded_rows=self.excluded,
            measured_bounds=self.measured_bounds, reference_vs_truth=self.reference_errors,
        )


def _fit(rows, key):
    deltas = sorted({r["delta"] for r in rows})
    xs, ys = [], []
    for d in deltas:
        sel = [r for r in rows if r["delta"] == d]
        dn = np.mean([r["data_norm"] for r in sel])
        e = np.mean([r[key] for r in sel])
        if dn > 0 and e > 0:
            xs.append(math.log(dn)), ys.append(math.log(e))
    if len(xs) < 2:
        return None
    fit = stats.linregress(xs, ys)
    resid = np.asarray(ys) - (fit.intercept + fit.slope * np.asarray(xs))
    return dict(slope=float(fit.slope), intercept=float(fit.intercept), slope_stderr=float(fit.stderr),
                fit_residual=float(np.sqrt(np.mean(resid**2))), points=len(xs))


def _sweep_cell(args):
    delta, seed, exact, obj, truth, reference, kw = args
    noisy = perturb_data(exact, delta, seed)
    res = reconstruct(noisy, obj, truth=truth, reference=reference, **kw)
    row = dict(delta=float(delta), seed=int(seed), data_norm=data_norm(noisy, exact),
               converged=res.converged, iterations=res.iterations, objective=res.objective_trace[-1])
    row.update(res.errors)
    return row


def measured_bounds(truth: SolutionPair, problem: MfgProblem) -> AprioriBounds:
    """Suprema measured on the forward solution, used as ``M1..M4``."""
    probe = check_bounds(truth, AprioriBounds(1.0, 1.0, 1.0, 1.0))
    tiny = np.finfo(float).tiny
    M1 = max(problem.interaction.Fy_bound, problem.interaction.Fz_bound, tiny)
    M3 = max(probe.sup_v, probe.sup_grad_v, probe.sup_lap_v, tiny)
    M4 = max(probe.sup_m, probe.sup_grad_m, tiny)
    return AprioriBounds(M1, max(problem.M2_recorded, tiny), M3, M4)


def stability_sweep(
    problem: MfgProblem,
    delta_grid,
    seeds,
    obj: WeightedObjective,
    *,
    truth: SolutionPair | None = None,
    workers: int = 1,
    **reconstruct_kw,
) -> StabilitySweep:
    """Perturb, reconstruct and fit ``log(error)`` against ``log(data norm)``.

    Errors are differences between the noisy-data reconstruction and the
    exact-data reconstruction, both minimisers of the same discrete problem.
    Rows that did not converge are kept in the table but left out of the fit.
    """
    if truth is None:
        truth = picard_solve(problem)
    exact = exact_data(truth)
    ref = reconstruct(exact, obj, truth=truth, **reconstruct_kw)
    reference = (ref.v_hat, ref.m_hat)
    cells = [(float(d), int(s), exact, obj, truth, reference, reconstruct_kw) for d in delta_grid for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    good = [r for r in rows if r["converged"]]
    keys = ERROR_KEYS + tuple(f"truth_{k}" for k in ERROR_KEYS)
    fits = {k: _fit(good, k) for k in keys}
    bounds = measured_bounds(truth, problem)
    return StabilitySweep(
        [float(d) for d in delta_grid], [int(s) for s in seeds], rows, fits, len(rows) - len(good),
        dict(M1=bounds.M1, M2=bounds.M2, M3=bounds.M3, M4=bounds.M4, M=bounds.M),
        {k: v for k, v in ref.errors.items()},
    )


@dataclass
class UniquenessReport:
    n_inits: int
    max_pairwise_distance: float
    solution_norm: float
    relative_distance: float
    objectives: list[float]
    non_converged: list[int]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _h10_pair(v: ScalarField, m: ScalarField) -> float:
    return norm(v, NormKind.H10_QT) + norm(m, NormKind.H10_QT)


def random_init(data: RetrospectiveData, rng: np.random.Generator, scale: float = 1.0) -> tuple[ScalarField, ScalarField]:
    """Interpolant plus random Neumann cosine fields of comparable size."""
    v0, m0 = interpolant_init(data)
    g = data.grid
    out = []
    for f in (v0, m0):
        noise = random_spacetime_field(g, rng)
        size = max(float(np.abs(f.values).max()), 1e-3)
        out.append(f + noise * (scale * size / max(float(np.abs(noise.values).max()), 1e-300)))
    return out[0], out[1]


def uniqueness_check(
    problem: MfgProblem,
    obj: WeightedObjective,
    n_inits: int,
    *,
    seed: int = 0,
    truth: SolutionPair | None = None,
    **reconstruct_kw,
) -> UniquenessReport:
    """Reconstruct from ``n_inits`` random starts on exact data and compare."""
    if n_inits < 1:
        raise ValueError("n_inits must be positive")
    if truth is None:
        truth = picard_solve(problem)
    data = exact_data(truth)
    rng = np.random.default_rng(seed)
    results = [reconstruct(data, obj, random_init(data, rng), **reconstruct_kw) for _ in range(n_inits)]
    dist = 0.0
    for i in range(n_inits):
        for j in range(i + 1, n_inits):
            a, b = results[i], results[j]
            dist = max(dist, _h10_pair(a.v_hat - b.v_hat, a.m_hat - b.m_hat))
    size = _h10_pair(results[0].v_hat, results[0].m_hat)
    return UniquenessReport(
        n_inits, dist, size, dist / size if size > 0 else dist,
        [r.objective_trace[-1] for r in results], [i for i, r in enumerate(results) if not r.converged],
    )
