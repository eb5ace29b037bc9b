"""Reproducible studies: the one-dimensional double well and pathological potential sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import bisect

from .errors import InvalidArgumentError, ResolutionError
from .measures import kl_gaussian
from .objective import RegularizationSpec, make_target, quadratic_potential
from .optimize import SolveOptions, minimize
from .parameterization import PrecisionShift, assemble_covariance, weighted_hs_norm
from .spectral import SpectralBasis, make_brownian_bridge_basis, sobolev_norm_sq

FOLD_EPSILON = 1.0 / 6.0


# --------------------------------------------------------------------------
# double well
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DoubleWellSpec:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")


def _check(sigma, epsilon):
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    if not sigma > 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")


def double_well_objective(m: float, sigma: float, epsilon: float) -> float:
    """``E[Phi]`` under ``N(m, sigma^2)`` minus ``log sigma``, constants dropped."""
    _check(sigma, epsilon)
    s2 = sigma * sigma
    return (0.25 * (m * m - 1) ** 2 + 0.5 * s2 * (3 * m * m - 1) + 0.75 * s2 * s2) / epsilon - math.log(sigma)


def double_well_gradient(m: float, sigma: float, epsilon: float) -> np.ndarray:
    _check(sigma, epsilon)
    s2 = sigma * sigma
    dm = (m * (m * m - 1) + 3 * m * s2) / epsilon
    ds = (sigma * (3 * m * m - 1) + 3 * sigma * s2) / epsilon - 1.0 / sigma
    return np.array([dm, ds])


def double_well_hessian(m: float, sigma: float, epsilon: float) -> np.ndarray:
    _check(sigma, epsilon)
    s2 = sigma * sigma
    hmm = (3 * m * m - 1 + 3 * s2) / epsilon
    hms = 6 * m * sigma / epsilon
    hss = (3 * m * m - 1 + 9 * s2) / epsilon + 1.0 / s2
    return np.array([[hmm, hms], [hms, hss]])


def classify(m: float, sigma: float, epsilon: float, tol: float = 1e-12) -> str:
    """``minimum``, ``saddle``, ``maximum`` or ``degenerate`` from the Hessian eigenvalues."""
    ev = np.linalg.eigvalsh(double_well_hessian(m, sigma, epsilon))
    scale = tol * max(1.0, float(np.max(np.abs(ev))))
    if np.any(np.abs(ev) <= scale):
        return "degenerate"
    if np.all(ev > 0):
        return "minimum"
    if np.all(ev < 0):
        return "maximum"
    return "saddle"


@dataclass(frozen=True)
class CriticalPoint:
    branch_id: str
    m: float
    sigma: float


@dataclass(frozen=True)
class CriticalPoints:
    epsilon: float
    symmetric: CriticalPoint
    off_center: tuple

    @property
    def all(self) -> tuple:
        return (self.symmetric,) + self.off_center

    @property
    def count(self) -> int:
        return len(self.all)


def double_well_critical_points(epsilon: float) -> CriticalPoints:
    """Closed-form solutions of the stationarity system of :func:`double_well_objective`.

    Symmetric branch: ``m = 0``, ``sigma^2 = (1 + sqrt(1 + 12 eps)) / 6``.
    Off-centre branches: ``sigma^2 = (1 -/+ sqrt(1 - 6 eps)) / 6``, ``m^2 = 1 - 3 sigma^2``,
    present for ``eps <= 1/6``.  The ``lower`` branch (minus sign) carries
    the off-centre minimisers.
    """
    DoubleWellSpec(epsilon)
    sym = CriticalPoint("symmetric", 0.0, math.sqrt((1 + math.sqrt(1 + 12 * epsilon)) / 6))
    disc = 1 - 6 * epsilon
    if disc < 0 and disc > -1e-15:
        disc = 0.0
    off = []
    if disc >= 0:
        root = math.sqrt(disc)
        labels = ("lower", "upper") if root > 0 else ("fold",)
        for label, sgn in zip(labels, (-1, 1)):
            s2 = (1 + sgn * root) / 6
            m = math.sqrt(1 - 3 * s2)
            off.append(CriticalPoint(f"{label}+", m, math.sqrt(s2)))
            off.append(CriticalPoint(f"{label}-", -m, math.sqrt(s2)))
    return CriticalPoints(float(epsilon), sym, tuple(off))


BIFURCATION_COLUMNS = ("epsilon", "branch_id", "m", "sigma", "objective", "kind", "is_global")


def bifurcation_sweep(epsilon_grid) -> list:
    """One row per critical point and ``epsilon``; global minimisers flagged (ties within 1e-12)."""
    eps = np.asarray(epsilon_grid, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) <= 0):
        raise InvalidArgumentError("epsilon grid must be positive and strictly increasing")
    rows = []
    for e in eps:
        cp = double_well_critical_points(float(e))
        vals = [double_well_objective(p.m, p.sigma, e) for p in cp.all]
        best = min(vals)
        for p, v in zip(cp.all, vals):
            rows.append(
                {
                    "epsilon": float(e),
                    "branch_id": p.branch_id,
                    "m": p.m,
                    "sigma": p.sigma,
                    "objective": v,
                    "kind": classify(p.m, p.sigma, e),
                    "is_global": bool(v - best <= 1e-12 * max(1.0, abs(best))),
                }
            )
    return rows


def critical_point_counts(rows) -> dict:
    """Number of critical points per ``epsilon`` in a sweep."""
    counts: dict = {}
    for r in rows:
        counts[r["epsilon"]] = counts.get(r["epsilon"], 0) + 1
    return counts


def crossover_gap(epsilon: float) -> float:
    """``D(off-centre minimiser) - D(symmetric minimiser)``; requires ``epsilon <= 1/6``."""
    cp = double_well_critical_points(epsilon)
    lower = [p for p in cp.off_center if p.m > 0][0]
    return double_well_objective(lower.m, lower.sigma, epsilon) - double_well_objective(0.0, cp.symmetric.sigma, epsilon)


def find_crossover(xtol: float = 1e-12) -> float:
    """The ``epsilon`` in ``[0.10, 1/6]`` where the global minimiser switches to ``m = 0``."""
    return float(bisect(crossover_gap, 0.10, FOLD_EPSILON, xtol=xtol))


# --------------------------------------------------------------------------
# pathological sequences
# --------------------------------------------------------------------------


def bump(t) -> np.ndarray:
    """``exp(-1 / (1 - t^2))`` on ``(-1, 1)``, zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_moments() -> tuple[float, float]:
    f = lambda t: math.exp(-1.0 / (1.0 - t * t))  # noqa: E731
    mass = quad(f, -1, 1, epsabs=1e-14, epsrel=1e-13)[0]
    sq = quad(lambda t: f(t) ** 2, -1, 1, epsabs=1e-14, epsrel=1e-13)[0]
    return mass, sq / mass**2


def mollifier_profile(t) -> np.ndarray:
    """Unit-mass bump supported in ``[-1, 1]``."""
    return bump(t) / _bump_moments()[0]


def mollifier_l2_sq() -> float:
    """``int phi^2`` for :func:`mollifier_profile`."""
    return _bump_moments()[1]


def oscillation_profile(t) -> np.ndarray:
    """``1 + sin(2 pi t) / 2``: positive, 1-periodic, mean 1."""
    return 1.0 + 0.5 * np.sin(2 * np.pi * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class SequenceFamily:
    """``kind`` is ``"mollifier"`` (``n phi(n t)``) or ``"oscillation"`` (``phi(n t)``)."""

    kind: str
    n: int
    mean: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mollifier", "oscillation"):
            raise InvalidArgumentError(f"unknown sequence family {self.kind!r}")
        if self.n < 1:
            raise InvalidArgumentError(f"sequence index must be >= 1, got {self.n}")

    def with_index(self, n: int) -> "SequenceFamily":
        return SequenceFamily(self.kind, n, self.mean)


def _spacing(basis: SpectralBasis) -> float:
    return float(basis.grid[1] - basis.grid[0])


def max_resolved_index(kind: str, basis: SpectralBasis) -> int:
    """Largest ``n`` whose feature width (support ``2/n`` or period ``1/n``) covers 4 grid spacings."""
    width = 2.0 if kind == "mollifier" else 1.0
    return int(math.floor(width / (4 * _spacing(basis)) * (1 + 1e-12)))


def make_sequence_potential(family: SequenceFamily, basis: SpectralBasis) -> np.ndarray:
    """Grid values of the ``n``-th potential; mollifiers are renormalised to unit quadrature mass."""
    n = family.n
    if n > max_resolved_index(family.kind, basis):
        width = "support 2/n" if family.kind == "mollifier" else "period 1/n"
        raise ResolutionError(f"{family.kind} n={n}: {width} is narrower than 4 grid spacings ({_spacing(basis):.4g})")
    t = basis.grid
    if family.kind == "mollifier":
        v = n * mollifier_profile(n * t)
        return v / basis.inner(v, np.ones_like(v))
    return family.mean * oscillation_profile(n * t)


def limit_potential(kind: str, basis: SpectralBasis) -> np.ndarray:
    """Limit objects: the discrete Dirac at the grid point nearest 0, or the constant mean 1."""
    if kind == "mollifier":
        j0 = int(np.argmin(np.abs(basis.grid)))
        v = np.zeros(basis.grid_size)
        v[j0] = 1.0 / basis.quadrature_weights[j0]
        return v
    if kind == "oscillation":
        return np.ones(basis.grid_size)
    raise InvalidArgumentError(f"unknown sequence family {kind!r}")


SEQUENCE_COLUMNS = ("n", "kl_to_limit", "sobolev_norm_sq", "l2_norm_sq", "weighted_hs_norm", "regularized_norm")


def regularized_optimum(v: np.ndarray, basis: SpectralBasis, reg: RegularizationSpec, init=None, opts=None):
    """Minimise ``KL(nu || mu_v) + delta |w|^2_{H^r}`` over multiplication potentials ``w``.

    ``mu_v`` is the Gaussian with precision ``C0^{-1} + v``; the mean is fixed at 0.
    """
    target = make_target(basis, quadratic_potential(v))
    fam = PrecisionShift.zero("multiplication", basis)
    start = fam if init is None else PrecisionShift.multiplication(init)
    opts = SolveOptions(fix_mean=True, max_iterations=500) if opts is None else opts
    return minimize(target, fam, (None, start), reg, opts)


def sequence_study(kind: str, n_list, delta: float = 1e-2, r: float = 1.0, basis: SpectralBasis | None = None) -> list:
    """Rows ``(n, KL(nu_n||nu_*), |v_n|^2_{H^r}, |v_n|^2_{L2}, weighted HS norm, regularised |w|_{H^r})``.

    ``nu_n`` and ``nu_*`` are centred Gaussians with precisions
    ``C0^{-1} + v_n`` and ``C0^{-1} + v_*``.
    """
    basis = make_brownian_bridge_basis(2.0, 32, 513) if basis is None else basis
    reg = RegularizationSpec(delta, r)
    v_star = limit_potential(kind, basis)
    nu_star = assemble_covariance(PrecisionShift.multiplication(v_star), None, basis)
    rows = []
    for n in n_list:
        v = make_sequence_potential(SequenceFamily(kind, int(n)), basis)
        shift = PrecisionShift.multiplication(v)
        nu_n = assemble_covariance(shift, None, basis)
        sol = regularized_optimum(v, basis, reg)
        rows.append(
            {
                "n": int(n),
                "kl_to_limit": kl_gaussian(nu_n, nu_star),
                "sobolev_norm_sq": sobolev_norm_sq(v, r, basis),
                "l2_norm_sq": basis.inner(v, v),
                "weighted_hs_norm": weighted_hs_norm(shift, basis),
                "regularized_norm": math.sqrt(sobolev_norm_sq(sol.shift.data, r, basis)),
                "regularized_converged": sol.converged,
            }
        )
    return rows
