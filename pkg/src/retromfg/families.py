"""Random Neumann-exact test fields built from cosine modes."""

from __future__ import annotations

import itertools

import numpy as np

from .grid import ScalarField, SpaceTimeGrid


def cosine_mode(grid: SpaceTimeGrid, k) -> np.ndarray:
    """``prod_i cos(k_i π (x_i + A_i) / (2 A_i))`` on the spatial grid.

    Any integer ``k_i`` gives zero normal derivative on both faces of axis i.
    """
    out = np.ones(grid.shape)
    for i, (x, a) in enumerate(zip(grid.coords(), grid.domain.half_widths)):
        out = out * np.cos(k[i] * np.pi * (x + a) / (2 * a))
    return out


def _modes(dim: int, max_mode: int):
    even = range(0, max_mode + 1, 2)
    return [k for k in itertools.product(even, repeat=dim)]


def random_cosine_series(
    grid: SpaceTimeGrid,
    rng: np.random.Generator,
    *,
    max_mode: int = 6,
    decay: float = 2.0,
    include_constant: bool = True,
) -> np.ndarray:
    """Spatial cosine series with even modes and coefficients ~ N(0,1)/(1+|k|²)^(decay/2)."""
    out = np.zeros(grid.shape)
    for k in _modes(grid.dim, max_mode):
        if not include_constant and not any(k):
            continue
        c = rng.standard_normal() / (1.0 + np.dot(k, k)) ** (decay / 2)
        out += c * cosine_mode(grid, k)
    return out


def random_spacetime_field(
    grid: SpaceTimeGrid,
    rng: np.random.Generator,
    *,
    n_terms: int = 4,
    max_mode: int = 4,
    decay: float = 2.0,
) -> ScalarField:
    """Sum of ``n_terms`` even cosine modes, each in a random quadratic-in-time envelope."""
    modes = _modes(grid.dim, max_mode)
    s = grid.times / grid.T
    vals = np.zeros(grid.spacetime_shape)
    for _ in range(n_terms):
        k = modes[rng.integers(len(modes))]
        c = rng.standard_normal() / (1.0 + np.dot(k, k)) ** (decay / 2)
        e0, e1, e2 = rng.standard_normal(3)
        envelope = e0 + e1 * s + e2 * s**2
        vals += c * np.multiply.outer(envelope, cosine_mode(grid, k))
    return ScalarField(grid, vals)


def cosine_family(grid: SpaceTimeGrid, size: int, seed: int, **kwargs) -> list[ScalarField]:
    """``size`` independent random spacetime fields from one seed."""
    rng = np.random.default_rng(seed)
    return [random_spacetime_field(grid, rng, **kwargs) for _ in range(size)]
