"""
Finite-difference operators on :class:`~retromfg.grid.SpaceTimeGrid`.

All operators are assembled once per grid as ``scipy.sparse`` matrices acting
on row-major flattened spatial arrays; spacetime fields are processed slice by
slice. Keeping them as matrices gives exact transposes for the least-squares
gradient in :mod:`retromfg.retro`.

Boundary handling, per axis and node-centred:

``NEUMANN0``
    even ghost reflection ``u[-1] = u[1]``. Centred first differences vanish
    on the faces and the weighted Laplacian ``W L`` is symmetric.
``DIRICHLET0``
    odd ghost reflection ``u[-1] = -u[1]``.
``FREE``
    no boundary condition; second-order one-sided closures. Used for norms
    and compliance checks.

Edge and corner ghosts are produced by applying the per-axis reflection
sequentially, which is what composing the one-axis operators does.
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import ScalarField, SpaceTimeGrid

__all__ = [
    "BoundaryCondition",
    "gradient",
    "laplacian",
    "mixed_second",
    "time_derivative",
    "divergence_of_flux",
    "apply",
    "axis_d1",
    "axis_d2",
    "laplacian_matrix",
    "mixed_matrix",
    "time_d1",
    "flux_matrices",
    "normal_derivative",
]


class BoundaryCondition(str, enum.Enum):
    NEUMANN0 = "neumann"
    DIRICHLET0 = "dirichlet"
    FREE = "free"


def _bc(bc) -> BoundaryCondition:
    return BoundaryCondition(bc)


def _d1_1d(n: int, h: float, bc: BoundaryCondition) -> sp.csr_matrix:
    d = sp.lil_matrix((n, n))
    for k in range(1, n - 1):
        d[k, k - 1] = -0.5 / h
        d[k, k + 1] = 0.5 / h
    if bc is BoundaryCondition.DIRICHLET0:
        d[0, 1] = 1.0 / h
        d[n - 1, n - 2] = -1.0 / h
    elif bc is BoundaryCondition.FREE:
        d[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        d[n - 1, n - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return d.tocsr()


def _d2_1d(n: int, h: float, bc: BoundaryCondition) -> sp.csr_matrix:
    d = sp.lil_matrix((n, n))
    ih2 = 1.0 / h**2
    for k in range(1, n - 1):
        d[k, k - 1] = ih2
        d[k, k] = -2 * ih2
        d[k, k + 1] = ih2
    if bc is BoundaryCondition.NEUMANN0:
        d[0, 0], d[0, 1] = -2 * ih2, 2 * ih2
        d[n - 1, n - 1], d[n - 1, n - 2] = -2 * ih2, 2 * ih2
    elif bc is BoundaryCondition.DIRICHLET0:
        d[0, 0] = d[n - 1, n - 1] = -2 * ih2
    elif n >= 4:
        d[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) * ih2
        d[n - 1, n - 4:] = np.array([-1.0, 4.0, -5.0, 2.0]) * ih2
    else:
        # three nodes: only a first-order closure fits
        d[0, :3] = d[1, :3]
        d[n - 1, :3] = d[1, :3]
    return d.tocsr()


def _embed(grid: SpaceTimeGrid, axis: int, op1d, shape=None) -> sp.csr_matrix:
    """Lift a one-axis operator to the flattened spatial grid."""
    shape = grid.shape if shape is None else shape
    before = int(np.prod(shape[:axis]))
    after = int(np.prod(shape[axis + 1:]))
    return sp.kron(sp.identity(before), sp.kron(op1d, sp.identity(after)), format="csr")


def _check_axis(grid: SpaceTimeGrid, axis: int):
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}-d grid")


@lru_cache(maxsize=256)
def axis_d1(grid: SpaceTimeGrid, axis: int, bc=BoundaryCondition.NEUMANN0) -> sp.csr_matrix:
    _check_axis(grid, axis)
    bc = _bc(bc)
    return _embed(grid, axis, _d1_1d(grid.shape[axis], grid.h[axis], bc))


@lru_cache(maxsize=256)
def axis_d2(grid: SpaceTimeGrid, axis: int, bc=BoundaryCondition.NEUMANN0) -> sp.csr_matrix:
    _check_axis(grid, axis)
    bc = _bc(bc)
    return _embed(grid, axis, _d2_1d(grid.shape[axis], grid.h[axis], bc))


@lru_cache(maxsize=64)
def laplacian_matrix(grid: SpaceTimeGrid, bc=BoundaryCondition.NEUMANN0) -> sp.csr_matrix:
    return sum(axis_d2(grid, i, _bc(bc)) for i in range(grid.dim)).tocsr()


@lru_cache(maxsize=256)
def mixed_matrix(grid: SpaceTimeGrid, i: int, j: int, bc=BoundaryCondition.NEUMANN0) -> sp.csr_matrix:
    """``u_{x_i x_j}``: 1-D second difference when i == j, cross stencil otherwise."""
    _check_axis(grid, i)
    _check_axis(grid, j)
    bc = _bc(bc)
    if i == j:
        return axis_d2(grid, i, bc)
    return (axis_d1(grid, i, bc) @ axis_d1(grid, j, bc)).tocsr()


@lru_cache(maxsize=64)
def time_d1(grid: SpaceTimeGrid) -> sp.csr_matrix:
    """Centred in time, second-order one-sided at t = 0 and t = T."""
    return _d1_1d(grid.time_steps + 1, grid.dt, BoundaryCondition.FREE)


@lru_cache(maxsize=64)
def flux_matrices(grid: SpaceTimeGrid, axis: int):
    """Face operators along ``axis``: ``(face_diff, face_avg, face_div)``.

    Faces sit between neighbouring nodes; there are ``N_axis - 1`` of them.
    ``face_div`` maps face fluxes back to nodes with half cells at the two
    boundary nodes and zero flux through Γ_axis^±, so that
    ``sum(W * face_div @ F) == 0`` for every face flux ``F``.
    """
    _check_axis(grid, axis)
    n, h = grid.shape[axis], grid.h[axis]
    k = np.arange(n - 1)
    diff = sp.csr_matrix((np.r_[-np.ones(n - 1), np.ones(n - 1)] / h, (np.r_[k, k], np.r_[k, k + 1])), shape=(n - 1, n))
    avg = sp.csr_matrix((np.full(2 * (n - 1), 0.5), (np.r_[k, k], np.r_[k, k + 1])), shape=(n - 1, n))
    cell = np.full(n, h)
    cell[0] = cell[-1] = 0.5 * h
    # node k receives +F_k (right face) and -F_{k-1} (left face)
    div = sp.csr_matrix(
        (np.r_[np.ones(n - 1), -np.ones(n - 1)], (np.r_[k, k + 1], np.r_[k, k])), shape=(n, n - 1)
    )
    div = sp.diags(1.0 / cell) @ div

    before = int(np.prod(grid.shape[:axis]))
    after = int(np.prod(grid.shape[axis + 1:]))

    def lift(m):
        return sp.kron(sp.identity(before), sp.kron(m, sp.identity(after)), format="csr")

    return lift(diff), lift(avg), lift(div)


def apply(op: sp.spmatrix, values: np.ndarray, grid: SpaceTimeGrid) -> np.ndarray:
    """Apply a spatial operator to a spatial or spacetime array.

    Spacetime input keeps its leading time axis. Nodal results are reshaped
    to the grid; face results stay flat over space.
    """
    values = np.asarray(values)
    ncol = op.shape[1]
    if values.size == ncol:
        out = op @ values.reshape(-1)
        return out.reshape(grid.shape) if out.size == grid.n_spatial else out
    flat = values.reshape(-1, ncol)
    out = (op @ flat.T).T
    if out.shape[1] == grid.n_spatial:
        return out.reshape(flat.shape[:1] + grid.shape)
    return out


def _wrap(u: ScalarField, vals) -> ScalarField:
    return ScalarField(u.grid, vals, u.kind)


def gradient(u: ScalarField, bc=BoundaryCondition.NEUMANN0) -> list[ScalarField]:
    """Centred first differences along each axis, ghost extension per ``bc``.

    With ``NEUMANN0`` the normal component on every face is exactly zero,
    whatever the field; for a field that is not Neumann-compatible (say
    ``u = x_1``) this forces the boundary value to 0 by construction.
    """
    return [_wrap(u, apply(axis_d1(u.grid, i, bc), u.values, u.grid)) for i in range(u.grid.dim)]


def laplacian(u: ScalarField, bc=BoundaryCondition.NEUMANN0) -> ScalarField:
    return _wrap(u, apply(laplacian_matrix(u.grid, bc), u.values, u.grid))


def mixed_second(u: ScalarField, i: int, j: int, bc=BoundaryCondition.NEUMANN0) -> ScalarField:
    """Second derivative ``u_{x_i x_j}`` with 0-based axes ``i``, ``j``."""
    return _wrap(u, apply(mixed_matrix(u.grid, i, j, bc), u.values, u.grid))


def time_derivative(u: ScalarField) -> ScalarField:
    if not u.is_spacetime:
        raise ValueError("time derivative of a spatial field")
    flat = u.values.reshape(u.values.shape[0], -1)
    return _wrap(u, (time_d1(u.grid) @ flat).reshape(u.values.shape))


def face_flux(m: np.ndarray, v: np.ndarray, kappa2: np.ndarray, grid: SpaceTimeGrid, axis: int, scheme: str = "centered") -> np.ndarray:
    """Face flux ``κ² m ∂_axis v`` with face-averaged κ² and centred or upwind m."""
    diff, avg, _ = flux_matrices(grid, axis)
    vel = apply(avg, kappa2, grid) * apply(diff, v, grid)
    if scheme == "centered":
        mf = apply(avg, m, grid)
    elif scheme == "upwind":
        left, right = face_select(grid, axis)
        mf = np.where(vel >= 0.0, apply(left, m, grid), apply(right, m, grid))
    else:
        raise ValueError(f"unknown flux scheme {scheme!r}; use 'centered' or 'upwind'")
    return vel * mf


@lru_cache(maxsize=64)
def face_select(grid: SpaceTimeGrid, axis: int):
    """Node values on the left and right of each face along ``axis``."""
    _check_axis(grid, axis)
    n = grid.shape[axis]
    k = np.arange(n - 1)
    before = int(np.prod(grid.shape[:axis]))
    after = int(np.prod(grid.shape[axis + 1:]))

    def lift(m):
        return sp.kron(sp.identity(before), sp.kron(m, sp.identity(after)), format="csr")

    left = sp.csr_matrix((np.ones(n - 1), (k, k)), shape=(n - 1, n))
    right = sp.csr_matrix((np.ones(n - 1), (k, k + 1)), shape=(n - 1, n))
    return lift(left), lift(right)


def divergence_array(m: np.ndarray, v: np.ndarray, kappa2: np.ndarray, grid: SpaceTimeGrid, scheme: str = "centered") -> np.ndarray:
    out = 0.0
    for axis in range(grid.dim):
        _, _, div = flux_matrices(grid, axis)
        out = out + apply(div, face_flux(m, v, kappa2, grid, axis, scheme), grid)
    return out


def divergence_of_flux(m: ScalarField, v: ScalarField, kappa2: ScalarField, scheme: str = "centered") -> ScalarField:
    """Conservative ``∇·(κ² m ∇v)``: signed face fluxes over the node's cell.

    Flux through the faces Γ_i^± is zero, so the trapezoidal integral of the
    result vanishes to round-off.
    """
    if m.grid != v.grid or m.grid != kappa2.grid:
        raise ValueError("fields live on different grids")
    if kappa2.is_spacetime:
        raise ValueError("kappa2 must be a spatial field")
    return _wrap(m, divergence_array(m.values, v.values, kappa2.values, m.grid, scheme))


def normal_derivative(u: ScalarField) -> dict[tuple[int, int], np.ndarray]:
    """One-sided outward normal derivative on each face.

    Fourth-order five-point closure (second order on axes with fewer than 5
    nodes). Keys are ``(axis, side)``; spacetime fields keep their time axis.
    """
    grid = u.grid
    out = {}
    for axis in range(grid.dim):
        n, h = grid.shape[axis], grid.h[axis]
        if n >= 5:
            c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
        else:
            c = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        vals = np.moveaxis(u.values, u.values.ndim - grid.dim + axis, -1)
        lo = vals[..., : c.size] @ c
        hi = vals[..., ::-1][..., : c.size] @ c
        # outward normal: -∂_x at the low face, +∂_x at the high face
        out[(axis, -1)] = -lo
        out[(axis, 1)] = -hi
    return out
