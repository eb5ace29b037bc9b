"""KL objective ``D_KL(nu || mu) - log Z_mu`` for ``mu ∝ exp(-Phi) mu0`` and its gradient.

For ``nu = N(m, (C0^{-1} + Gamma)^{-1})`` the objective splits into

    gaussian_kl     D_KL(nu || mu0), closed form
    phi_expectation E^nu[Phi]
    penalty         delta * |v|^2_{H^r} for multiplication potentials

``log Z_mu`` is a constant and is never included.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import InvalidArgumentError, NotPositiveError, UnsupportedMethodError
from .measures import GaussianMeasure, kl_gaussian, rng_for
from .parameterization import PrecisionShift, assemble_covariance, positivity_margin
from .spectral import SpectralBasis, make_euclidean_basis, project, sobolev_weights

# objective evaluation refuses precisions closer than this to singular
MIN_MARGIN = 1e-10
DEFAULT_ORDER = 20


# --------------------------------------------------------------------------
# potentials
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointwisePotential:
    """Scalar ``phi(x)`` with derivatives, applied at every grid point.

    The callables accept arrays whose last axis runs over grid points, so
    parameters may be scalars or grid functions.
    """

    name: str
    params: dict
    phi: Callable
    dphi: Callable
    d2phi: Callable
    min_curvature: float | None = None

    def __add__(self, other: "PointwisePotential") -> "PointwisePotential":
        curv = None
        if self.min_curvature is not None and other.min_curvature is not None:
            curv = self.min_curvature + other.min_curvature
        return PointwisePotential(
            name=f"{self.name}+{other.name}",
            params={"terms": [self.describe(), other.describe()]},
            phi=lambda x: self.phi(x) + other.phi(x),
            dphi=lambda x: self.dphi(x) + other.dphi(x),
            d2phi=lambda x: self.d2phi(x) + other.d2phi(x),
            min_curvature=curv,
        )

    def describe(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"name": self.name, "params": params}


def zero_potential() -> PointwisePotential:
    z = lambda x: np.zeros_like(x)  # noqa: E731
    return PointwisePotential("zero", {}, z, z, z, 0.0)


def quadratic_potential(q) -> PointwisePotential:
    """``phi(x) = q x^2 / 2``; ``q`` may be a grid function."""
    qa = np.asarray(q, dtype=float)
    return PointwisePotential(
        "quadratic",
        {"q": q},
        lambda x: 0.5 * qa * x**2,
        lambda x: qa * x,
        lambda x: qa * np.ones_like(x),
        float(np.min(qa)),
    )


def quartic_potential(a: float, b: float) -> PointwisePotential:
    """``phi(x) = a x^4 / 4 + b x^2 / 2``."""
    return PointwisePotential(
        "quartic",
        {"a": a, "b": b},
        lambda x: 0.25 * a * x**4 + 0.5 * b * x**2,
        lambda x: a * x**3 + b * x,
        lambda x: 3 * a * x**2 + b,
        float(b) if a >= 0 else None,
    )


def double_well_potential(epsilon: float) -> PointwisePotential:
    """``phi(x) = (x^2 - 1)^2 / (4 epsilon)``."""
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    e = float(epsilon)
    return PointwisePotential(
        "double_well",
        {"epsilon": e},
        lambda x: (x**2 - 1) ** 2 / (4 * e),
        lambda x: x * (x**2 - 1) / e,
        lambda x: (3 * x**2 - 1) / e,
        -1.0 / e,
    )


def constant_potential(c: float) -> PointwisePotential:
    return PointwisePotential(
        "constant",
        {"c": c},
        lambda x: np.full_like(x, c),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros_like(x),
        0.0,
    )


POTENTIALS = {
    "zero": zero_potential,
    "quadratic": quadratic_potential,
    "quartic": quartic_potential,
    "double_well": double_well_potential,
    "constant": constant_potential,
}


def make_potential(name: str, **params) -> PointwisePotential:
    """Look up a registered potential by name: ``double_well(epsilon)``, ``quadratic(q)``, ``quartic(a, b)``, ``zero``."""
    try:
        factory = POTENTIALS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown potential {name!r}; known: {sorted(POTENTIALS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for potential {name!r}: {exc}") from None


@dataclass(frozen=True, eq=False)
class GridFunctional:
    """Black-box ``Phi`` of grid values: ``func((n, G)) -> (n,)``; ``grad`` optional, same shapes."""

    func: Callable
    grad: Callable | None = None
    name: str = "functional"


@dataclass(frozen=True)
class Growth:
    """Constants of ``-c1 |x|^a <= Phi(x) <= c2 exp(c3 |x|^a)`` with the grid sup norm."""

    c1: float
    c2: float
    c3: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise InvalidArgumentError(f"growth exponent must lie in (0, 2), got {self.alpha}")


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Target ``mu ∝ exp(-Phi) mu0`` on ``basis``."""

    basis: SpectralBasis
    potential: PointwisePotential | GridFunctional
    growth: Growth | None = None
    lebesgue_reference: bool = False

    @property
    def separable(self) -> bool:
        return isinstance(self.potential, PointwisePotential)

    def evaluate(self, x) -> np.ndarray:
        """``Phi`` at coefficient vectors ``x`` of shape ``(n, gamma)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xg = x @ self.basis.eigenfunction_table
        if self.separable:
            vals = self.potential.phi(xg) @ self.basis.quadrature_weights
        else:
            vals = np.asarray(self.potential.func(xg), dtype=float)
        if self.growth is not None:
            self._check_growth(xg, vals)
        return vals

    def grid_gradient(self, xg) -> np.ndarray:
        """Gradient of ``Phi`` w.r.t. grid values, shape ``(n, G)``."""
        if self.separable:
            return self.potential.dphi(xg) * self.basis.quadrature_weights
        if self.potential.grad is None:
            raise UnsupportedMethodError("gradient requested for a functional without a gradient callable")
        return np.asarray(self.potential.grad(xg), dtype=float)

    def _check_growth(self, xg, vals):
        g = self.growth
        r = np.max(np.abs(xg), axis=-1) ** g.alpha
        ok = (vals >= -g.c1 * r) & (vals <= g.c2 * np.exp(g.c3 * r))
        if not np.all(ok):
            raise InvalidArgumentError(f"potential violates its declared growth bound at {np.sum(~ok)} point(s)")

    def describe(self) -> dict:
        d = {"basis": self.basis.describe(), "lebesgue_reference": self.lebesgue_reference}
        if self.separable:
            d["potential"] = self.potential.describe()
        else:
            d["potential"] = {"name": self.potential.name}
        return d


def make_target(basis: SpectralBasis, potential, growth: Growth | None = None, lebesgue_reference: bool = False) -> TargetSpec:
    """Build a target; ``lebesgue_reference`` reads ``exp(-phi)`` as a density w.r.t. Lebesgue measure.

    The Lebesgue form is only available on a Euclidean basis, where it is
    rewritten relative to ``mu0`` by adding ``-x^2 / (2 lambda)`` to ``phi``.
    """
    if lebesgue_reference:
        if basis.kind != "euclidean":
            raise InvalidArgumentError("a Lebesgue reference needs a euclidean basis")
        if not isinstance(potential, PointwisePotential):
            raise InvalidArgumentError("a Lebesgue reference needs a pointwise potential")
        offset = quadratic_potential(-1.0 / basis.eigenvalues)
        offset = PointwisePotential("lebesgue_offset", {}, offset.phi, offset.dphi, offset.d2phi, None)
        potential = potential + offset
    return TargetSpec(basis, potential, growth, lebesgue_reference)


def double_well_target(epsilon: float, variance: float = 1.0) -> TargetSpec:
    """One-dimensional double well ``exp(-(x^2-1)^2/(4 eps))`` w.r.t. Lebesgue measure."""
    return make_target(make_euclidean_basis([variance]), double_well_potential(epsilon), lebesgue_reference=True)


# --------------------------------------------------------------------------
# methods and values
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Hermite quadrature of the 1-D marginals at each grid point."""

    order: int = DEFAULT_ORDER

    def __post_init__(self):
        if self.order < 2:
            raise InvalidArgumentError(f"quadrature order must be >= 2, got {self.order}")


@dataclass(frozen=True)
class MonteCarlo:
    """Monte Carlo with fixed draws ``x = m + C^{1/2} z`` (symmetric square root)."""

    n: int = 10_000
    seed: int = 0


@lru_cache(maxsize=32)
def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E[f(Z)]``, ``Z ~ N(0, 1)``."""
    z, w = hermegauss(order)
    w = w / np.sqrt(2 * np.pi)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@dataclass
class ObjectiveValue:
    gaussian_kl: float
    phi_expectation: float
    penalty: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RegularizationSpec:
    """Penalty ``delta |v|^2_{H^r}``, applied to multiplication potentials only."""

    delta: float = 0.0
    r: float = 1.0

    def __post_init__(self):
        if self.delta < 0 or self.r < 0:
            raise InvalidArgumentError("delta and r must be non-negative")


NO_REGULARIZATION = RegularizationSpec(0.0, 1.0)


# --------------------------------------------------------------------------
# expectations
# --------------------------------------------------------------------------


def _quadrature_terms(mu, var, target: TargetSpec, order: int, need_grad: bool):
    z, wz = gauss_hermite(order)
    pot = target.potential
    w = target.basis.quadrature_weights
    sd = np.sqrt(var)
    x = mu[None, :] + sd[None, :] * z[:, None]
    value = float(wz @ pot.phi(x) @ w)
    if not need_grad:
        return value, None, None
    d1 = pot.dphi(x)
    d_mu = w * (wz @ d1)
    # derivative of the rule itself in s = var; limit 1/2 E[phi''] where s = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        stein = (wz * z) @ d1 / (2 * sd)
    d_var = w * np.where(sd > 0, stein, 0.5 * (wz @ pot.d2phi(x)))
    return value, d_mu, d_var


def _sym_sqrt(P):
    d, Q = np.linalg.eigh(P)
    a = 1.0 / np.sqrt(d)
    return d, Q, a, (Q * a) @ Q.T


def _mc_terms(mean, P, target: TargetSpec, n: int, seed, need_grad: bool):
    d, Q, a, A = _sym_sqrt(P)
    z = rng_for(seed).standard_normal((n, mean.size))
    x = mean + z @ A
    E = target.basis.eigenfunction_table
    value = float(np.mean(target.evaluate(x)))
    if not need_grad:
        return value, None, None
    g = target.grid_gradient(x @ E) @ E.T
    grad_m = g.mean(axis=0)
    M = g.T @ z / n
    Mt = Q.T @ M @ Q
    Mt = 0.5 * (Mt + Mt.T)
    K = 1.0 / (np.outer(d, d) * (a[:, None] + a[None, :]))
    grad_P = -Q @ (Mt * K) @ Q.T
    return value, grad_m, grad_P


def expectation_phi(nu: GaussianMeasure, target: TargetSpec, method=None) -> float:
    """``E^nu[Phi]`` by marginal Gauss-Hermite quadrature or by Monte Carlo."""
    method = Quadrature() if method is None else method
    if isinstance(method, Quadrature):
        if not target.separable:
            raise UnsupportedMethodError("quadrature needs a separable pointwise potential")
        mu, var = nu.grid_moments()
        return _quadrature_terms(mu, var, target, method.order, False)[0]
    if isinstance(method, MonteCarlo):
        return _mc_terms(nu.mean, nu.precision, target, method.n, method.seed, False)[0]
    raise UnsupportedMethodError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# objective and gradient
# --------------------------------------------------------------------------


def _penalty(shift: PrecisionShift, basis: SpectralBasis, reg: RegularizationSpec, need_grad: bool):
    if shift.variant != "multiplication" or reg.delta == 0:
        return 0.0, None
    W = sobolev_weights(reg.r, basis)
    vhat = project(shift.data, basis.mode_count, basis)
    val = reg.delta * float(np.sum(W * vhat**2))
    if not need_grad:
        return val, None
    grad = 2 * reg.delta * basis.quadrature_weights * ((W * vhat) @ basis.eigenfunction_table)
    return val, grad


def objective_of_measure(nu: GaussianMeasure, target: TargetSpec, method=None) -> ObjectiveValue:
    """Objective (without penalty) for an arbitrary Gaussian on the target's basis."""
    kl = kl_gaussian(nu, GaussianMeasure.reference(target.basis))
    ephi = expectation_phi(nu, target, method)
    return ObjectiveValue(kl, ephi, 0.0, kl + ephi)


def evaluate(mean, shift: PrecisionShift, target: TargetSpec, reg=None, method=None, need_grad: bool = True):
    """Objective value and, optionally, gradients w.r.t. the mean and the shift parameters.

    Returns ``(ObjectiveValue, grad_mean, grad_shift)``; the gradients are
    ``None`` when ``need_grad`` is false.
    """
    reg = NO_REGULARIZATION if reg is None else reg
    method = Quadrature() if method is None else method
    basis = target.basis
    mean = np.zeros(basis.mode_count) if mean is None else np.asarray(mean, dtype=float)
    if mean.shape != (basis.mode_count,):
        raise InvalidArgumentError(f"mean has shape {mean.shape}, expected ({basis.mode_count},)")
    margin = positivity_margin(shift, basis)
    if margin < MIN_MARGIN:
        raise NotPositiveError(f"positivity margin {margin:.3g} below {MIN_MARGIN:g}")
    nu = assemble_covariance(shift, mean, basis)
    lam = basis.eigenvalues
    kl = kl_gaussian(nu, GaussianMeasure.reference(basis))

    if isinstance(method, Quadrature):
        if not target.separable:
            raise UnsupportedMethodError("quadrature needs a separable pointwise potential")
        mu, var = nu.grid_moments()
        ephi, d_mu, d_var = _quadrature_terms(mu, var, target, method.order, need_grad)
    elif isinstance(method, MonteCarlo):
        ephi, g_m, g_P = _mc_terms(mean, nu.precision, target, method.n, method.seed, need_grad)
    else:
        raise UnsupportedMethodError(f"unknown method {method!r}")

    pen, g_pen = _penalty(shift, basis, reg, need_grad)
    value = ObjectiveValue(kl, ephi, pen, kl + ephi + pen)
    if not need_grad:
        return value, None, None

    C = nu.covariance
    E = basis.eigenfunction_table
    grad_mean = mean / lam
    grad_C = 0.5 * np.diag(1.0 / lam)
    grad_P = 0.5 * C
    if isinstance(method, Quadrature):
        grad_mean = grad_mean + E @ d_mu
        grad_C = grad_C + (E * d_var) @ E.T
    else:
        grad_mean = grad_mean + g_m
        grad_P = grad_P + g_P
    grad_P = grad_P - C @ grad_C @ C
    grad_shift = shift.parameter_gradient(grad_P, basis)
    if g_pen is not None:
        grad_shift = grad_shift + g_pen
    return value, grad_mean, grad_shift


def kl_objective(mean, shift: PrecisionShift, target: TargetSpec, reg=None, method=None) -> ObjectiveValue:
    return evaluate(mean, shift, target, reg, method, need_grad=False)[0]


def gradient(mean, shift: PrecisionShift, target: TargetSpec, reg=None, method=None):
    """``(grad_mean, grad_shift)``; ``grad_shift`` follows :meth:`PrecisionShift.parameters` ordering."""
    _, gm, gs = evaluate(mean, shift, target, reg, method, need_grad=True)
    return gm, gs
