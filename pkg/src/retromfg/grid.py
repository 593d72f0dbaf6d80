"""
Rectangular-prism space-time geometry, sampled fields, quadrature and norms.

The spatial domain is the box

    Ω = (-A_1, A_1) × ... × (-A_n, A_n)

sampled by a uniform tensor-product grid whose nodes include the faces
x_i = ±A_i. Time runs over [0, T] in uniform steps. Spacetime arrays are
stored time-first, shape ``(time_steps + 1, N_1, ..., N_n)``, row-major.

Quadrature is the composite trapezoidal rule on every axis. It is exact for
multilinear integrands and, together with the even-reflection difference
operators in :mod:`retromfg.ops`, gives a discrete Gauss formula (the
weighted Neumann Laplacian is symmetric).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "PrismDomain",
    "SpaceTimeGrid",
    "ScalarField",
    "FieldKind",
    "NormKind",
    "Region",
    "build_grid",
    "integrate",
    "norm",
    "trapezoid_weights",
]


class FieldKind(str, enum.Enum):
    SPATIAL = "spatial"
    SPACETIME = "spacetime"


class NormKind(str, enum.Enum):
    """Norms used by the stability estimates.

    ``H10_QT`` is value plus spatial gradient in L2(Q_T); ``H21_QT`` adds the
    time derivative and every second spatial derivative.
    """

    L2_OMEGA = "L2_Omega"
    H1_OMEGA = "H1_Omega"
    L2_QT = "L2_QT"
    H10_QT = "H10_QT"
    H21_QT = "H21_QT"


class Region(str, enum.Enum):
    OMEGA = "Omega"
    QT = "QT"


@dataclass(frozen=True)
class PrismDomain:
    half_widths: tuple[float, ...]

    def __post_init__(self):
        hw = tuple(float(a) for a in self.half_widths)
        if len(hw) < 1:
            raise ValueError("domain needs at least one axis")
        if any(not np.isfinite(a) or a <= 0.0 for a in hw):
            raise ValueError(f"half widths must be positive, got {hw}")
        object.__setattr__(self, "half_widths", hw)

    @property
    def dim(self) -> int:
        return len(self.half_widths)

    @property
    def volume(self) -> float:
        return float(np.prod([2.0 * a for a in self.half_widths]))

    def faces(self) -> list[tuple[int, int]]:
        """The 2n faces as ``(axis, side)`` pairs, side -1 for x_i = -A_i."""
        return [(i, s) for i in range(self.dim) for s in (-1, +1)]


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform node grid on the cylinder Q_T = Ω × (0, T).

    Spacings are derived from node counts, never stored on their own.
    """

    domain: PrismDomain
    T: float
    nodes_per_axis: tuple[int, ...]
    time_steps: int

    def __post_init__(self):
        nodes = tuple(int(n) for n in self.nodes_per_axis)
        object.__setattr__(self, "nodes_per_axis", nodes)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "time_steps", int(self.time_steps))
        if len(nodes) != self.domain.dim:
            raise ValueError(
                f"{len(nodes)} node counts given for a {self.domain.dim}-d domain"
            )
        if any(n < 3 for n in nodes):
            raise ValueError(f"need at least 3 nodes per axis, got {nodes}")
        if not np.isfinite(self.T) or self.T <= 0.0:
            raise ValueError(f"time horizon must be positive, got {self.T}")
        if self.time_steps < 2:
            raise ValueError(f"need at least 2 time steps, got {self.time_steps}")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes_per_axis

    @property
    def spacetime_shape(self) -> tuple[int, ...]:
        return (self.time_steps + 1,) + self.nodes_per_axis

    @property
    def n_spatial(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(
            2.0 * a / (n - 1) for a, n in zip(self.domain.half_widths, self.nodes_per_axis)
        )

    @property
    def dt(self) -> float:
        return self.T / self.time_steps

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        # linspace hits both endpoints exactly
        return tuple(
            np.linspace(-a, a, n) for a, n in zip(self.domain.half_widths, self.nodes_per_axis)
        )

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.time_steps + 1)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Spatial coordinate arrays broadcast to ``shape``."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def spacetime_coords(self) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        """``(t, (x_1, ..., x_n))`` broadcast to ``spacetime_shape``."""
        grids = np.meshgrid(self.times, *self.axes, indexing="ij")
        return grids[0], tuple(grids[1:])

    def face_index(self, axis: int, side: int) -> tuple:
        """Index tuple selecting the face Γ_axis^± of a spatial array."""
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side < 0 else -1
        return tuple(idx)

    def boundary_mask(self) -> np.ndarray:
        """Spatial nodes on ∂Ω; in spacetime this slab is S_T."""
        mask = np.zeros(self.shape, dtype=bool)
        for axis, side in self.domain.faces():
            mask[self.face_index(axis, side)] = True
        return mask

    def spatial_weights(self) -> np.ndarray:
        return trapezoid_weights(self.h, self.nodes_per_axis)

    def time_weights(self) -> np.ndarray:
        return trapezoid_weights((self.dt,), (self.time_steps + 1,))

    def spacetime_weights(self) -> np.ndarray:
        return self.time_weights()[:, None] * self.spatial_weights().ravel()[None, :]

    def with_nodes(self, nodes_per_axis: Sequence[int], time_steps: int | None = None):
        return SpaceTimeGrid(
            self.domain,
            self.T,
            tuple(nodes_per_axis),
            self.time_steps if time_steps is None else time_steps,
        )


def build_grid(
    domain: PrismDomain | Sequence[float],
    T: float,
    nodes_per_axis: int | Sequence[int],
    time_steps: int,
) -> SpaceTimeGrid:
    """Build a uniform space-time grid; scalars broadcast over every axis."""
    if not isinstance(domain, PrismDomain):
        domain = PrismDomain(tuple(domain))
    if np.isscalar(nodes_per_axis):
        nodes_per_axis = (int(nodes_per_axis),) * domain.dim
    return SpaceTimeGrid(domain, T, tuple(nodes_per_axis), time_steps)


def trapezoid_weights(h: Sequence[float], n: Sequence[int]) -> np.ndarray:
    """Tensor-product trapezoidal weights with shape ``n``."""
    w = np.ones(())
    for hi, ni in zip(h, n):
        wi = np.full(ni, hi)
        wi[0] = wi[-1] = 0.5 * hi
        w = np.multiply.outer(w, wi)
    return w


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values sampled on grid nodes.

    ``kind`` is inferred from the array shape when not given. The stored
    array is a read-only copy.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    kind: FieldKind = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        kind = self.kind
        if kind is None:
            if vals.shape == self.grid.shape:
                kind = FieldKind.SPATIAL
            elif vals.shape == self.grid.spacetime_shape:
                kind = FieldKind.SPACETIME
            else:
                raise ValueError(
                    f"array of shape {vals.shape} fits neither {self.grid.shape} "
                    f"nor {self.grid.spacetime_shape}"
                )
        kind = FieldKind(kind)
        expected = self.grid.shape if kind is FieldKind.SPATIAL else self.grid.spacetime_shape
        if vals.size != int(np.prod(expected)):
            raise ValueError(f"{kind.value} field needs {np.prod(expected)} values, got {vals.size}")
        vals = vals.reshape(expected)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", kind)

    @property
    def is_spacetime(self) -> bool:
        return self.kind is FieldKind.SPACETIME

    def slice_at(self, k: int) -> "ScalarField":
        """Spatial field at time level ``k``."""
        if not self.is_spacetime:
            raise ValueError("time slice of a spatial field")
        return ScalarField(self.grid, self.values[k], FieldKind.SPATIAL)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.kind)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn, spacetime: bool = False) -> "ScalarField":
        """Sample ``fn(*x)`` or, with ``spacetime=True``, ``fn(t, *x)``."""
        if spacetime:
            t, x = grid.spacetime_coords()
            vals = np.broadcast_to(fn(t, *x), grid.spacetime_shape)
        else:
            vals = np.broadcast_to(fn(*grid.coords()), grid.shape)
        return cls(grid, vals)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, spacetime: bool = False) -> "ScalarField":
        return cls(grid, np.zeros(grid.spacetime_shape if spacetime else grid.shape))


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


def integrate(f: ScalarField, region: Region | str = Region.OMEGA, time_index: int | None = None) -> float:
    """Composite trapezoidal integral of ``f``.

    ``region="Omega"`` integrates a spatial field, or the slice ``time_index``
    of a spacetime field. ``region="QT"`` integrates a spacetime field over
    the whole cylinder.
    """
    region = Region(region)
    grid = f.grid
    if region is Region.OMEGA:
        if f.is_spacetime:
            if time_index is None:
                raise ValueError("integrating a spacetime field over Omega needs a time_index")
            vals = f.values[time_index]
        else:
            if time_index is not None:
                raise ValueError("time_index given for a spatial field")
            vals = f.values
        return float(np.sum(grid.spatial_weights() * vals))
    if not f.is_spacetime:
        raise ValueError("QT integral needs a spacetime field")
    w = grid.spacetime_weights().reshape(grid.spacetime_shape)
    return float(np.sum(w * f.values))


def norm(f: ScalarField, kind: NormKind | str) -> float:
    """Discrete Sobolev-type norms.

    Derivatives use second-order one-sided closures at the faces (no boundary
    condition assumed), so the norm of any smooth field converges at order 2.
    """
    from . import ops

    kind = NormKind(kind)
    if kind in (NormKind.L2_OMEGA, NormKind.H1_OMEGA):
        if f.is_spacetime:
            raise ValueError(f"{kind.value} applies to spatial fields")
        sq = integrate(f * f)
        if kind is NormKind.H1_OMEGA:
            for g in ops.gradient(f, ops.BoundaryCondition.FREE):
                sq += integrate(g * g)
        return float(np.sqrt(sq))

    if not f.is_spacetime:
        raise ValueError(f"{kind.value} applies to spacetime fields")
    sq = integrate(f * f, Region.QT)
    if kind is NormKind.L2_QT:
        return float(np.sqrt(sq))
    for g in ops.gradient(f, ops.BoundaryCondition.FREE):
        sq += integrate(g * g, Region.QT)
    if kind is NormKind.H21_QT:
        ut = ops.time_derivative(f)
        sq += integrate(ut * ut, Region.QT)
        for i in range(f.grid.dim):
            for j in range(f.grid.dim):
                d = ops.mixed_second(f, i, j, ops.BoundaryCondition.FREE)
                sq += integrate(d * d, Region.QT)
    return float(np.sqrt(sq))
