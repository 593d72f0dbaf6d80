"""
Carleman weight, the prism integral identity, and the two weighted estimates.

The weight is ``φ(t) = exp(2λ (t + a)^ν)``. It overflows double precision for
modest parameters, so it is only handled through its logarithm: each report
divides every term by a common factor ``exp(log_scale)`` and exponentiates
the normalised weight ``exp(σ·2λ[(t + a)^ν - (T + a)^ν]) ∈ (0, 1]``.

Estimate terms are quadratic forms in u. Per-slice spatial Gram matrices are
computed once per family and re-weighted for every λ, which makes calibration
over λ grids cheap and lets a constant be certified on a whole span.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import ops
from .grid import ScalarField, integrate

logger = logging.getLogger(__name__)

__all__ = [
    "CarlemanWeight",
    "IdentityReport",
    "EstimateReport",
    "Calibration",
    "BoundaryComplianceError",
    "weight_log_value",
    "verify_identity",
    "forward_estimate_terms",
    "backward_estimate_terms",
    "calibrate_constant",
    "check_compliance",
    "estimate_reports",
    "margins_hold",
]

FORWARD = "forward"
FORWARD_PRISM = "forward_prism"
BACKWARD = "backward"
ESTIMATES = (FORWARD, FORWARD_PRISM, BACKWARD)


class BoundaryComplianceError(ValueError):
    """A test field does not satisfy the boundary condition it is used with."""


@dataclass(frozen=True)
class CarlemanWeight:
    """Parameters of the weight ``exp(2λ(t+a)^ν)`` on ``[0, T]``.

    ``sigma`` is the power the weight carries inside the integrals (1 for φ,
    2 for φ²).
    """

    lam: float
    nu: float
    T: float
    a: float = 2.0
    sigma: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.nu <= 2:
            raise ValueError(f"nu must exceed 2, got {self.nu}")
        if self.a <= 1:
            raise ValueError(f"a must exceed 1, got {self.a}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.sigma not in (1, 2):
            raise ValueError(f"sigma must be 1 or 2, got {self.sigma}")

    def log_value(self, t):
        return weight_log_value(self, t)

    @property
    def log_scale(self) -> float:
        """``log φ^σ(T)``, the common factor removed from weighted integrals."""
        return self.sigma * 2.0 * self.lam * (self.T + self.a) ** self.nu

    def normalized(self, t) -> np.ndarray:
        """``φ^σ(t) / φ^σ(T)``; lies in (0, 1] and equals 1 at t = T."""
        t = np.asarray(t, dtype=float)
        return np.exp(self.sigma * 2.0 * self.lam * ((t + self.a) ** self.nu - (self.T + self.a) ** self.nu))

    def replace(self, **kw) -> "CarlemanWeight":
        d = dict(lam=self.lam, nu=self.nu, T=self.T, a=self.a, sigma=self.sigma)
        d.update(kw)
        return CarlemanWeight(**d)


def weight_log_value(w: CarlemanWeight, t):
    """``2λ(t + a)^ν`` for ``t`` in ``[0, T]``."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0) or np.any(ta > w.T * (1 + 1e-12)):
        raise ValueError(f"t must lie in [0, {w.T}]")
    out = 2.0 * w.lam * (ta + w.a) ** w.nu
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float
    relative_gap: float
    h: float

    def as_dict(self) -> dict:
        return dict(lhs=self.lhs, rhs=self.rhs, relative_gap=self.relative_gap, h=self.h)


def check_compliance(u: ScalarField, bc, factor: float = 10.0) -> float:
    """Raise unless ``u`` satisfies ``bc`` on every face to ``factor * h_max**2 * scale``.

    Neumann compliance looks at the one-sided normal derivative, Dirichlet
    compliance at the face values. ``scale`` is ``max(1, sup|∇u|)`` or
    ``max(1, sup|u|)`` respectively, so a steep but compliant field is not
    rejected for stencil truncation on a coarse grid. Returns the worst
    violation.
    """
    bc = ops.BoundaryCondition(bc)
    if bc is ops.BoundaryCondition.FREE:
        return 0.0
    grid = u.grid
    if bc is ops.BoundaryCondition.NEUMANN0:
        lead = u.values.ndim - grid.dim
        grads = np.gradient(u.values, *grid.h, axis=tuple(range(lead, u.values.ndim)))
        grads = [grads] if grid.dim == 1 else grads
        scale = max([1.0] + [float(np.abs(d).max()) for d in grads])
    else:
        scale = max(1.0, float(np.abs(u.values).max()))
    tol = factor * max(grid.h) ** 2 * scale
    if bc is ops.BoundaryCondition.NEUMANN0:
        faces = ops.normal_derivative(u)
        what = "normal derivative"
    else:
        faces = {f: u.values[(Ellipsis,) + grid.face_index(*f)] for f in grid.domain.faces()}
        what = "value"
    worst, where = 0.0, None
    for (axis, side), vals in faces.items():
        a = np.abs(vals)
        if a.size and a.max() > worst:
            worst = float(a.max())
            where = (axis, side, np.unravel_index(int(a.argmax()), a.shape))
    if worst > tol:
        axis, side, idx = where
        face = f"x{axis + 1}={'+' if side > 0 else '-'}A{axis + 1}"
        raise BoundaryComplianceError(
            f"field violates {bc.value} condition: |{what}| = {worst:.3e} > {tol:.3e} "
            f"on face {face} at face node {tuple(int(i) for i in idx)}"
        )
    return worst


def verify_identity(u: ScalarField, bc=ops.BoundaryCondition.NEUMANN0, *, tol_factor: float = 10.0) -> IdentityReport:
    """Compare ``∫(Δu)²`` with ``Σ_ij ∫ u_{x_i x_j}²`` over the prism.

    The two agree for zero Neumann or zero Dirichlet data; the discrete gap
    closes at second order.
    """
    if u.is_spacetime:
        raise ValueError("identity check takes a spatial field")
    check_compliance(u, bc, tol_factor)
    lap = ops.laplacian(u, bc)
    lhs = integrate(lap * lap)
    rhs = 0.0
    for i in range(u.grid.dim):
        for j in range(u.grid.dim):
            d = ops.mixed_second(u, i, j, bc)
            rhs += integrate(d * d)
    gap = abs(lhs - rhs) / max(lhs, np.finfo(float).tiny)
    return IdentityReport(lhs, rhs, gap, max(u.grid.h))


@dataclass(frozen=True)
class EstimateReport:
    """Term decomposition of one Carleman estimate for one field and weight.

    Every term is divided by ``exp(log_scale)``. For the forward estimates

        margin(C) = lhs - principal - C (gradient + zero_order) + boundary_T

    and for the backward estimate

        margin(C) = lhs - C (gradient + zero_order - boundary_T - boundary_0).
    """

    which: str
    lhs: float
    rhs_terms: dict
    log_scale: float
    lam: float
    nu: float
    sigma: int
    calibrated_C: float | None = None

    def margin(self, C: float) -> float:
        t = self.rhs_terms
        if self.which == BACKWARD:
            return self.lhs - C * (t["gradient"] + t["zero_order"] - t["boundary_T"] - t["boundary_0"])
        return self.lhs - t["principal"] - C * (t["gradient"] + t["zero_order"]) + t["boundary_T"]

    def critical_C(self) -> float:
        """Largest C with non-negative margin (margins are affine in C); inf if unbounded."""
        t = self.rhs_terms
        if self.which == BACKWARD:
            slope = t["gradient"] + t["zero_order"] - t["boundary_T"] - t["boundary_0"]
            base = self.lhs
        else:
            slope = t["gradient"] + t["zero_order"]
            base = self.lhs - t["principal"] + t["boundary_T"]
        if slope <= 0:
            return math.inf if base >= 0 else -math.inf
        return base / slope

    def with_C(self, C: float) -> "EstimateReport":
        return EstimateReport(self.which, self.lhs, self.rhs_terms, self.log_scale, self.lam, self.nu, self.sigma, C)

    def as_dict(self) -> dict:
        d = dict(which=self.which, lhs=self.lhs, log_scale=self.log_scale, lam=self.lam, nu=self.nu, sigma=self.sigma)
        d.update({f"rhs_{k}": v for k, v in self.rhs_terms.items()})
        if self.calibrated_C is not None:
            d["calibrated_C"] = self.calibrated_C
            d["margin"] = self.margin(self.calibrated_C)
        return d


@dataclass(frozen=True)
class _Slices:
    """Per-time-level spatial Gram matrices of a list of fields (λ-independent).

    Each array has shape ``(Nt+1, K, K)``; entry ``[k, i, j]`` is the spatial
    integral at time level k of the product of the term for fields i and j.
    """

    which: str
    beta: float
    times: np.ndarray
    time_weights: np.ndarray
    op2: np.ndarray        # (u_t ± βΔu)
    ut2: np.ndarray
    principal: np.ndarray  # Δu, or every u_{x_i x_j}
    grad2: np.ndarray
    u2: np.ndarray

    @property
    def size(self) -> int:
        return self.u2.shape[1]


def _slice_grams(fields: Sequence[ScalarField], beta: float, which: str) -> _Slices:
    if which not in ESTIMATES:
        raise ValueError(f"unknown estimate {which!r}; use one of {ESTIMATES}")
    grid = fields[0].grid
    for u in fields:
        if not u.is_spacetime:
            raise ValueError("Carleman estimates take spacetime fields")
        if u.grid != grid:
            raise ValueError("all fields must share one grid")
        check_compliance(u, ops.BoundaryCondition.NEUMANN0)
    w = grid.spatial_weights().ravel()
    nt = grid.time_steps + 1
    stack = np.stack([u.values.reshape(nt, -1) for u in fields])  # (K, Nt+1, Nx)

    def nodal(op):
        return (op @ stack.reshape(-1, stack.shape[-1]).T).T.reshape(stack.shape)

    def gram(*parts):
        out = 0.0
        for p in parts:
            pt = p.transpose(1, 0, 2)  # (Nt+1, K, Nx)
            out = out + (pt * w) @ pt.transpose(0, 2, 1)
        return out

    ut = np.stack([ops.time_derivative(u).values.reshape(nt, -1) for u in fields])
    lap = nodal(ops.laplacian_matrix(grid))
    sign = 1.0 if which != BACKWARD else -1.0
    grads = [nodal(ops.axis_d1(grid, i)) for i in range(grid.dim)]
    if which == FORWARD_PRISM:
        principal = gram(*(nodal(ops.mixed_matrix(grid, i, j)) for i in range(grid.dim) for j in range(grid.dim)))
    else:
        principal = gram(lap)
    return _Slices(
        which, beta, grid.times, grid.time_weights(),
        gram(ut + sign * beta * lap), gram(ut), principal, gram(*grads), gram(stack),
    )


def _term_matrices(s: _Slices, w: CarlemanWeight) -> tuple[np.ndarray, dict]:
    """Weighted ``K x K`` matrices of the left side and of every right-side term."""
    lam, nu, a, T = w.lam, w.nu, w.a, w.T
    phi = w.normalized(s.times) * s.time_weights

    def q(x):
        return np.einsum("t,tij->ij", phi, x)

    # e^{2λ(T+a)^ν} relative to the common factor
    bT = math.exp(2 * lam * (T + a) ** nu - w.log_scale)
    if s.which == BACKWARD:
        b0 = math.exp(2 * lam * a**nu - w.log_scale)
        terms = dict(
            gradient=math.sqrt(nu) * s.beta * q(s.grad2),
            zero_order=lam * nu**2 * q(s.u2),
            boundary_T=lam * nu * (T + a) ** (nu - 1) * bT * s.u2[-1],
            boundary_0=b0 * (s.grad2[0] + math.sqrt(nu) * s.u2[0]),
        )
    else:
        terms = dict(
            principal=q(s.ut2 / 4 + s.beta**2 * s.principal),
            gradient=lam * nu * q(s.grad2),
            zero_order=lam**2 * nu**2 * q(s.u2),
            boundary_T=bT * (s.grad2[-1] + lam * nu * (T + a) ** nu * s.u2[-1]),
        )
    return q(s.op2), terms


def _margin_forms(which: str, lhs: np.ndarray, t: dict) -> tuple[np.ndarray, np.ndarray]:
    """``(P, Q)`` with margin(C) = P - C Q as quadratic forms."""
    if which == BACKWARD:
        return lhs, t["gradient"] + t["zero_order"] - t["boundary_T"] - t["boundary_0"]
    return lhs - t["principal"] + t["boundary_T"], t["gradient"] + t["zero_order"]


def _reports_from(s: _Slices, w: CarlemanWeight) -> list[EstimateReport]:
    lhs, terms = _term_matrices(s, w)
    return [
        EstimateReport(s.which, float(lhs[i, i]), {k: float(v[i, i]) for k, v in terms.items()}, w.log_scale, w.lam, w.nu, w.sigma)
        for i in range(s.size)
    ]


def forward_estimate_terms(u: ScalarField, w: CarlemanWeight, beta: float, variant: str = "laplacian_form") -> EstimateReport:
    """Terms of the forward estimate for ``∂_t + βΔ``.

    ``variant="laplacian_form"`` uses ``(Δu)²`` in the principal term;
    ``"mixed_form"`` uses ``Σ u_{x_i x_j}²`` (valid on prisms).
    """
    which = {"laplacian_form": FORWARD, "mixed_form": FORWARD_PRISM}.get(variant)
    if which is None:
        raise ValueError(f"unknown variant {variant!r}")
    return _reports_from(_slice_grams([u], beta, which), w)[0]


def backward_estimate_terms(u: ScalarField, w: CarlemanWeight, beta: float) -> EstimateReport:
    """Terms of the backward estimate for ``∂_t - βΔ``."""
    return _reports_from(_slice_grams([u], beta, BACKWARD), w)[0]


@dataclass
class Calibration:
    """Empirical constant of one estimate over a family of fields.

    ``C`` is the largest constant (to ``rel_tol``) whose margin is
    non-negative for every λ ≥ ``lambda_star`` on the grid and, depending on
    ``certify``, for every member or for every linear combination of members.
    It is a property of the family and grid, not a proven constant.
    """

    which: str
    C: float
    lambda_star: float
    nu: float
    sigma: int
    certify: str
    binding_member: int | None
    binding_lambda: float | None
    degenerate: bool = False
    violated: bool = False
    reports: list = field(default_factory=list, repr=False)

    def rows(self) -> list[dict]:
        return [dict(member=i, **r.as_dict()) for i, r in self.reports]

    def summary(self) -> dict:
        return dict(
            which=self.which, C=self.C, lambda_star=self.lambda_star, nu=self.nu, sigma=self.sigma,
            certify=self.certify, binding_member=self.binding_member, binding_lambda=self.binding_lambda,
            degenerate=self.degenerate, violated=self.violated,
        )


def default_sigma(which: str) -> int:
    return 1


def estimate_reports(
    which: str,
    family: Iterable[ScalarField],
    lambda_grid: Sequence[float],
    nu: float,
    beta: float,
    *,
    a: float = 2.0,
    sigma: int | None = None,
) -> list[tuple[int, EstimateReport]]:
    """Reports for every (member, λ) pair, in member-major order."""
    sigma = default_sigma(which) if sigma is None else sigma
    family = list(family)
    s = _slice_grams(family, beta, which)
    T = family[0].grid.T
    by_lam = [_reports_from(s, CarlemanWeight(lam, nu, T, a, sigma)) for lam in lambda_grid]
    return [(i, by_lam[j][i]) for i in range(len(family)) for j in range(len(lambda_grid))]


def margins_hold(reports, C: float) -> bool:
    return all(r.margin(C) >= 0.0 for _, r in reports)


CERTIFY = ("span", "members")


def calibrate_constant(
    which: str,
    family: Iterable[ScalarField],
    lambda_grid: Sequence[float],
    nu: float,
    beta: float,
    *,
    a: float = 2.0,
    sigma: int | None = None,
    lambda_star: float | None = None,
    certify: str = "span",
    rel_tol: float = 1e-3,
    bracket: tuple[float, float] = (1e-12, 1e6),
) -> Calibration:
    """Bisect (in log C) for the largest constant keeping every margin non-negative.

    Margins are quadratic forms in the field. With ``certify="members"`` only
    the listed fields are checked. With ``certify="span"`` (default) C must
    keep ``P - C Q`` positive semidefinite on the span of the family, so the
    constant also covers every linear combination of members. The member
    check is the diagonal of the same matrix.
    """
    if which not in ESTIMATES:
        raise ValueError(f"unknown estimate {which!r}; use one of {ESTIMATES}")
    if certify not in CERTIFY:
        raise ValueError(f"certify must be one of {CERTIFY}, got {certify!r}")
    family = list(family)
    if not family:
        raise ValueError("empty family")
    lambda_grid = sorted(float(x) for x in lambda_grid)
    lambda_star = lambda_grid[0] if lambda_star is None else float(lambda_star)
    lams = [x for x in lambda_grid if x >= lambda_star]
    if not lams:
        raise ValueError(f"no grid value at or above lambda_star={lambda_star}")
    sigma = default_sigma(which) if sigma is None else sigma
    s = _slice_grams(family, beta, which)
    T = family[0].grid.T
    forms = []
    for lam in lams:
        w = CarlemanWeight(lam, nu, T, a, sigma)
        P, Q = _margin_forms(which, *_term_matrices(s, w))
        # rescale members so roundoff is judged relative to each field's size
        d = np.sqrt(np.abs(np.diag(P)) + np.abs(np.diag(Q)))
        d[d == 0] = 1.0
        forms.append((lam, P / np.outer(d, d), Q / np.outer(d, d)))

    def worst(C):
        """Smallest normalised margin and where it occurs."""
        best = (math.inf, None, None)
        for lam, P, Q in forms:
            M = P - C * Q
            if certify == "members":
                i = int(np.argmin(np.diag(M)))
                val = M[i, i]
            else:
                vals, vecs = np.linalg.eigh(M)
                val, i = vals[0], int(np.argmax(np.abs(vecs[:, 0])))
            if val < best[0]:
                best = (float(val), i, lam)
        return best

    def holds(C):
        return worst(C)[0] >= -_EIG_TOL

    lo, hi = bracket
    cal = Calibration(which, hi, lambda_star, nu, sigma, certify, None, None)
    if holds(hi):
        cal.degenerate = True
        logger.info("%s: every margin holds at the upper bracket C=%g (degenerate family)", which, hi)
    elif not holds(lo):
        cal.C, cal.violated = 0.0, True
        logger.warning("%s: margins fail already at C=%g; estimate violated on this family", which, lo)
    else:
        while hi / lo - 1.0 > rel_tol:
            mid = math.sqrt(lo * hi)
            if holds(mid):
                lo = mid
            else:
                hi = mid
        cal.C = lo
    if not cal.degenerate:
        # binding pair: most negative margin just above the calibrated constant
        _, cal.binding_member, cal.binding_lambda = worst(hi if not cal.violated else lo)
    by_lam = [_reports_from(s, CarlemanWeight(lam, nu, T, a, sigma)) for lam in lams]
    cal.reports = [(i, by_lam[j][i].with_C(cal.C)) for i in range(len(family)) for j in range(len(lams))]
    return cal


# eigenvalue roundoff allowance for the normalised margin matrices
_EIG_TOL = 1e-10
