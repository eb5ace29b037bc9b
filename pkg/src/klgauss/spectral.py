"""Spectral truncations of Gaussian reference measures.

A :class:`SpectralBasis` holds the leading eigenpairs of a reference
covariance ``C0`` sampled on a quadrature grid.  Coefficient vectors are
coordinates in that eigenbasis; grid functions are values at the grid
points.  Three families are provided:

* ``bridge``: Brownian bridge on ``[-L/2, L/2]`` (inverse Dirichlet Laplacian),
* ``torus``: ``(-Delta + I)^{-s}`` on a circle of circumference ``L``,
* ``euclidean``: ``R^gamma`` with a diagonal covariance, where the "grid" is
  the coordinate index set with unit weights.  This is the finite-dimensional
  setting of the double-well example.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NotTraceClassError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenpairs of a reference covariance on a quadrature grid.

    Attributes
    ----------
    kind : str
        ``"bridge"``, ``"torus"`` or ``"euclidean"``.
    domain_length : float
        Interval length or torus circumference.
    eigenvalues : np.ndarray
        Covariance eigenvalues, shape ``(gamma,)``, non-increasing.
    grid : np.ndarray
        Grid points, shape ``(G,)``.
    quadrature_weights : np.ndarray
        Trapezoid weights, shape ``(G,)``.
    eigenfunction_table : np.ndarray
        ``e_alpha(t_j)``, shape ``(gamma, G)``.
    frequencies : np.ndarray
        Wave numbers used by the Sobolev weights ``(1 + freq**2)**r``.
    s : float or None
        Fractional order of the torus covariance.
    """

    kind: str
    domain_length: float
    eigenvalues: np.ndarray
    grid: np.ndarray
    quadrature_weights: np.ndarray
    eigenfunction_table: np.ndarray
    frequencies: np.ndarray
    s: float | None = None

    @property
    def mode_count(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def grid_size(self) -> int:
        return self.grid.shape[0]

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def synthesize(self, coefficients) -> np.ndarray:
        """Grid values of ``sum_alpha c_alpha e_alpha``; accepts ``(..., k)`` with ``k <= gamma``."""
        c = np.asarray(coefficients, dtype=float)
        k = c.shape[-1]
        if k > self.mode_count:
            raise InvalidArgumentError(f"{k} coefficients exceed mode_count={self.mode_count}")
        return c @ self.eigenfunction_table[:k]

    def inner(self, f, g) -> float:
        """Quadrature inner product of two grid functions."""
        return float(np.sum(self.quadrature_weights * np.asarray(f) * np.asarray(g)))

    def same_as(self, other: "SpectralBasis") -> bool:
        return self is other or (
            self.kind == other.kind
            and self.mode_count == other.mode_count
            and self.grid_size == other.grid_size
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and np.array_equal(self.grid, other.grid)
        )

    def describe(self) -> dict:
        d = {
            "kind": self.kind,
            "length": self.domain_length,
            "modes": self.mode_count,
            "grid_size": self.grid_size,
        }
        if self.s is not None:
            d["s"] = self.s
        return d


def make_brownian_bridge_basis(interval_length: float, mode_count: int, grid_size: int) -> SpectralBasis:
    """Dirichlet sine basis of the Brownian bridge on ``[-L/2, L/2]``.

    ``lambda_alpha = (L / (pi alpha))**2`` and
    ``e_alpha(t) = sqrt(2/L) sin(pi alpha (t + L/2) / L)``; the uniform grid
    includes both endpoints and carries composite trapezoid weights, under
    which the sampled sines are exactly orthonormal.
    """
    L = float(interval_length)
    if not L > 0:
        raise InvalidArgumentError(f"interval_length must be positive, got {interval_length}")
    if mode_count < 1:
        raise InvalidArgumentError(f"mode_count must be >= 1, got {mode_count}")
    if grid_size < 2 * mode_count or grid_size < 3:
        raise InvalidArgumentError(
            f"grid_size must be >= 2*mode_count (and >= 3), got {grid_size} for mode_count={mode_count}"
        )
    alpha = np.arange(1, mode_count + 1, dtype=float)
    t = np.linspace(-L / 2, L / 2, grid_size)
    h = L / (grid_size - 1)
    w = np.full(grid_size, h)
    w[0] = w[-1] = h / 2
    table = np.sqrt(2.0 / L) * np.sin(np.pi * np.outer(alpha, t + L / 2) / L)
    # sin(pi * alpha) is not exactly zero in floating point
    table[:, 0] = 0.0
    table[:, -1] = 0.0
    freq = np.pi * alpha / L
    return SpectralBasis(
        kind="bridge",
        domain_length=L,
        eigenvalues=_frozen(1.0 / freq**2),
        grid=_frozen(t),
        quadrature_weights=_frozen(w),
        eigenfunction_table=_frozen(table),
        frequencies=_frozen(freq),
    )


def torus_wave_numbers(mode_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Wave numbers and cos/sin flags in basis order: ``0, +1, -1, +2, -2, ...``.

    Positive entries are cosine modes, negative entries sine modes.
    """
    k = np.zeros(mode_count, dtype=int)
    for i in range(1, mode_count):
        k[i] = (i + 1) // 2 if i % 2 else -(i // 2)
    return np.abs(k), k >= 0


def make_torus_fractional_basis(circumference: float, s: float, mode_count: int, grid_size: int) -> SpectralBasis:
    """Fourier basis of ``(-Delta + I)^{-s}`` on a circle of circumference ``L``.

    Modes are ordered by ``|k|`` and then cosine before sine; the constant
    mode comes first.
    """
    L = float(circumference)
    if not s > 0.5:
        raise NotTraceClassError(f"(-Delta + I)^(-s) is trace class in 1-D only for s > 1/2, got s={s}")
    if not L > 0:
        raise InvalidArgumentError(f"circumference must be positive, got {circumference}")
    if mode_count < 1:
        raise InvalidArgumentError(f"mode_count must be >= 1, got {mode_count}")
    if grid_size < 2 * mode_count:
        raise InvalidArgumentError(f"grid_size must be >= 2*mode_count, got {grid_size}")
    t = np.arange(grid_size) * (L / grid_size)
    w = np.full(grid_size, L / grid_size)
    kabs, is_cos = torus_wave_numbers(mode_count)
    omega = 2 * np.pi * kabs / L
    table = np.empty((mode_count, grid_size))
    for i in range(mode_count):
        if kabs[i] == 0:
            table[i] = 1.0 / np.sqrt(L)
        elif is_cos[i]:
            table[i] = np.sqrt(2.0 / L) * np.cos(omega[i] * t)
        else:
            table[i] = np.sqrt(2.0 / L) * np.sin(omega[i] * t)
    return SpectralBasis(
        kind="torus",
        domain_length=L,
        eigenvalues=_frozen((1.0 + omega**2) ** (-float(s))),
        grid=_frozen(t),
        quadrature_weights=_frozen(w),
        eigenfunction_table=_frozen(table),
        frequencies=_frozen(omega),
        s=float(s),
    )


def make_euclidean_basis(variances) -> SpectralBasis:
    """``R^gamma`` with reference ``N(0, diag(variances))`` and unit point weights."""
    lam = np.atleast_1d(np.asarray(variances, dtype=float))
    if lam.ndim != 1 or lam.size < 1:
        raise InvalidArgumentError("variances must be a non-empty 1-D sequence")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise InvalidArgumentError("variances must be positive and finite")
    if np.any(np.diff(lam) > 0):
        raise InvalidArgumentError("variances must be non-increasing")
    n = lam.size
    return SpectralBasis(
        kind="euclidean",
        domain_length=float(n),
        eigenvalues=_frozen(lam),
        grid=_frozen(np.arange(n, dtype=float)),
        quadrature_weights=_frozen(np.ones(n)),
        eigenfunction_table=_frozen(np.eye(n)),
        frequencies=_frozen(np.zeros(n)),
    )


def project(x, gamma_sub: int, basis: SpectralBasis) -> np.ndarray:
    """Coefficients ``<x, e_alpha>`` (quadrature) for ``alpha <= gamma_sub``."""
    if not 0 <= gamma_sub <= basis.mode_count:
        raise InvalidArgumentError(f"gamma_sub must lie in [0, {basis.mode_count}], got {gamma_sub}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.grid_size:
        raise InvalidArgumentError(f"grid function has {x.shape[-1]} values, basis grid has {basis.grid_size}")
    return (x * basis.quadrature_weights) @ basis.eigenfunction_table[:gamma_sub].T


def cameron_martin_norm_sq(m, basis: SpectralBasis) -> float:
    """``sum_alpha m_alpha**2 / lambda_alpha`` over the supplied coefficients."""
    m = np.asarray(m, dtype=float)
    if m.shape[-1] > basis.mode_count:
        raise InvalidArgumentError(f"{m.shape[-1]} coefficients exceed mode_count={basis.mode_count}")
    return float(np.sum(m**2 / basis.eigenvalues[: m.shape[-1]]))


def sobolev_weights(r: float, basis: SpectralBasis) -> np.ndarray:
    return (1.0 + basis.frequencies**2) ** float(r)


def sobolev_norm_sq(v, r: float, basis: SpectralBasis) -> float:
    """``sum_alpha (1 + freq_alpha**2)**r v_alpha**2`` with ``v_alpha`` the basis coefficients of ``v``."""
    if r < 0:
        raise InvalidArgumentError(f"Sobolev order must be non-negative, got {r}")
    coeffs = project(v, basis.mode_count, basis)
    return float(np.sum(sobolev_weights(r, basis) * coeffs**2))
