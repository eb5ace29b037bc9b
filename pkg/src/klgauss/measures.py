"""Gaussian and Gaussian-mixture measures in basis coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NotPositiveError
from .spectral import SpectralBasis


def rng_for(seed) -> np.random.Generator:
    """Counter-based generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(seed))


def _chol_lower(a: np.ndarray, what: str) -> np.ndarray:
    a = 0.5 * (a + a.T)
    try:
        return cholesky(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveError(f"{what} is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """``N(mean, F F^T)`` on the span of ``basis``.

    ``covariance_factor`` is lower triangular with a strictly positive
    diagonal.  ``precision_cache`` is filled when the measure was built from
    a precision matrix.
    """

    basis: SpectralBasis
    mean: np.ndarray
    covariance_factor: np.ndarray
    precision_cache: np.ndarray | None = None

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).ravel()
        F = np.array(self.covariance_factor, dtype=float)
        g = self.basis.mode_count
        if m.shape != (g,) or F.shape != (g, g):
            raise InvalidArgumentError(f"mean/factor shapes {m.shape}/{F.shape} do not match gamma={g}")
        if not np.all(np.diag(F) > 0):
            raise NotPositiveError("covariance factor must have a strictly positive diagonal")
        for a in (m, F):
            a.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "covariance_factor", F)

    @classmethod
    def from_covariance(cls, basis: SpectralBasis, mean, covariance) -> "GaussianMeasure":
        C = np.asarray(covariance, dtype=float)
        return cls(basis, mean, _chol_lower(C, "covariance"))

    @classmethod
    def from_precision(cls, basis: SpectralBasis, mean, precision) -> "GaussianMeasure":
        P = np.asarray(precision, dtype=float)
        P = 0.5 * (P + P.T)
        L = _chol_lower(P, "precision")
        Linv = solve_triangular(L, np.eye(P.shape[0]), lower=True)
        C = Linv.T @ Linv
        F = _chol_lower(C, "covariance")
        P = P.copy()
        P.setflags(write=False)
        return cls(basis, mean, F, P)

    @classmethod
    def reference(cls, basis: SpectralBasis) -> "GaussianMeasure":
        """The reference measure ``N(0, diag(lambda))``."""
        lam = basis.eigenvalues
        P = np.diag(1.0 / lam)
        P.setflags(write=False)
        return cls(basis, np.zeros(lam.size), np.diag(np.sqrt(lam)), P)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def covariance(self) -> np.ndarray:
        F = self.covariance_factor
        return F @ F.T

    @property
    def precision(self) -> np.ndarray:
        if self.precision_cache is not None:
            return self.precision_cache
        Finv = solve_triangular(self.covariance_factor, np.eye(self.dim), lower=True)
        return Finv.T @ Finv

    @property
    def logdet_covariance(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.covariance_factor))))

    @property
    def trace(self) -> float:
        return float(np.sum(self.covariance_factor**2))

    def log_density(self, x) -> np.ndarray:
        """Lebesgue log-density in coefficient coordinates; ``x`` is ``(gamma,)`` or ``(n, gamma)``."""
        x = np.asarray(x, dtype=float)
        z = solve_triangular(self.covariance_factor, (x - self.mean).T, lower=True)
        quad = np.sum(z**2, axis=0)
        return -0.5 * (quad + self.logdet_covariance + self.dim * np.log(2 * np.pi))

    def grid_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of the point evaluations ``x(t_j)``."""
        E = self.basis.eigenfunction_table
        mu = self.mean @ E
        var = np.sum((self.covariance_factor.T @ E) ** 2, axis=0)
        return mu, var


@dataclass(frozen=True, eq=False)
class MixtureMeasure:
    """Convex combination ``sum_i p_i nu_i`` of Gaussians on one basis."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        p = np.array(self.weights, dtype=float).ravel()
        if not comps:
            raise InvalidArgumentError("a mixture needs at least one component")
        if p.size != len(comps):
            raise InvalidArgumentError("one weight per component required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"weights must lie on the simplex, got {p}")
        b = comps[0].basis
        if any(not c.basis.same_as(b) for c in comps):
            raise InvalidArgumentError("all mixture components must share one basis")
        p.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", p)

    @property
    def basis(self) -> SpectralBasis:
        return self.components[0].basis


def _check_pair(a: GaussianMeasure, b: GaussianMeasure):
    if a.dim != b.dim or not a.basis.same_as(b.basis):
        raise InvalidArgumentError("Gaussian measures live on different bases")


def kl_gaussian(nu1: GaussianMeasure, nu0: GaussianMeasure) -> float:
    """``D_KL(nu1 || nu0)`` by trace, Mahalanobis and log-determinant terms."""
    _check_pair(nu1, nu0)
    F0 = nu0.covariance_factor
    A = solve_triangular(F0, nu1.covariance_factor, lower=True)
    b = solve_triangular(F0, nu1.mean - nu0.mean, lower=True)
    val = 0.5 * (np.sum(A**2) - nu1.dim + b @ b + nu0.logdet_covariance - nu1.logdet_covariance)
    return max(float(val), 0.0)


def log_hellinger_gaussian(nu1: GaussianMeasure, nu2: GaussianMeasure) -> float:
    _check_pair(nu1, nu2)
    S = 0.5 * (nu1.covariance + nu2.covariance)
    L = _chol_lower(S, "averaged covariance")
    dm = solve_triangular(L, nu1.mean - nu2.mean, lower=True)
    logdet_S = 2.0 * np.sum(np.log(np.diag(L)))
    val = 0.25 * (nu1.logdet_covariance + nu2.logdet_covariance) - 0.5 * logdet_S - 0.125 * (dm @ dm)
    return min(float(val), 0.0)


def hellinger_gaussian(nu1: GaussianMeasure, nu2: GaussianMeasure) -> float:
    """Hellinger integral ``H(nu1; nu2)`` in ``(0, 1]``; general (non-commuting) covariances."""
    return float(np.exp(log_hellinger_gaussian(nu1, nu2)))


def hellinger_distance(nu1: GaussianMeasure, nu2: GaussianMeasure) -> float:
    return float(np.sqrt(max(-np.expm1(log_hellinger_gaussian(nu1, nu2)), 0.0)))


def tv_bounds(nu1: GaussianMeasure, nu2: GaussianMeasure) -> tuple[float, float]:
    """Lower and upper bounds on the total variation distance.

    lower = ``D_hell**2``; upper = ``min(4 D_hell, sqrt(KL/2), 1)`` with
    ``KL = D_KL(nu1 || nu2)``.
    """
    d2 = max(-np.expm1(log_hellinger_gaussian(nu1, nu2)), 0.0)
    upper = min(4.0 * np.sqrt(d2), np.sqrt(0.5 * kl_gaussian(nu1, nu2)), 1.0)
    return float(d2), float(upper)


def sample(nu: GaussianMeasure, n: int, seed) -> np.ndarray:
    """``n`` draws ``mean + F z``, shape ``(n, gamma)``."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    z = rng_for(seed).standard_normal((n, nu.dim))
    return nu.mean + z @ nu.covariance_factor.T


def _log_ratio_to_reference(nu: GaussianMeasure, x: np.ndarray) -> np.ndarray:
    lam = nu.basis.eigenvalues
    ref = -0.5 * (np.sum(x**2 / lam, axis=-1) + np.sum(np.log(lam)) + nu.dim * np.log(2 * np.pi))
    return nu.log_density(x) - ref


def mixture_log_density_ratio(mix: MixtureMeasure, x) -> np.ndarray | float:
    """``log d(mix)/d(mu0)`` at coefficient vector(s) ``x``, evaluated with a max-shift."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    logs = np.stack([_log_ratio_to_reference(c, xs) for c in mix.components])
    out = logsumexp(logs, axis=0, b=mix.weights[:, None])
    return float(out[0]) if single else out


def component_draws(mix: MixtureMeasure, counts, seed) -> list:
    """Standard normal blocks for each component, from independent child streams."""
    children = np.random.SeedSequence(seed).spawn(len(mix.components))
    out = []
    for c, k, child in zip(mix.components, counts, children):
        out.append(rng_for(child).standard_normal((int(k), c.dim)) if k > 0 else None)
    return out


def stratified_counts(weights, n: int, allocation: str = "proportional") -> np.ndarray:
    p = np.asarray(weights, dtype=float)
    if allocation == "proportional":
        counts = np.where(p > 0, np.maximum(2, np.rint(n * p)), 0)
    elif allocation == "equal":
        counts = np.full(p.size, max(2, n // p.size))
    else:
        raise InvalidArgumentError(f"unknown allocation {allocation!r}")
    return counts.astype(int)


def kl_mixture_mc(mix: MixtureMeasure, target, n: int, seed, allocation: str = "proportional") -> tuple[float, float]:
    """Stratified estimate of ``E^nu[log dnu/dmu0] + E^nu[Phi]`` and its standard error.

    This is ``D_KL(nu || mu) - log Z_mu``.  With ``allocation="proportional"``
    component ``i`` receives ``round(n p_i)`` draws; ``"equal"`` gives every
    component the same block of draws, which keeps the estimate smooth in the
    weights for optimisation.  Components with zero weight are skipped.
    """
    if n < 100:
        raise InvalidArgumentError(f"n must be >= 100, got {n}")
    p = mix.weights
    counts = stratified_counts(p, n, allocation)
    draws = component_draws(mix, counts, seed)
    est, var = 0.0, 0.0
    for pi, comp, z in zip(p, mix.components, draws):
        if pi == 0 or z is None:
            continue
        x = comp.mean + z @ comp.covariance_factor.T
        h = mixture_log_density_ratio(mix, x) + target.evaluate(x)
        est += pi * float(np.mean(h))
        var += pi**2 * float(np.var(h, ddof=1)) / h.size
    return est, float(np.sqrt(var))


def log_normalizer_mc(target, n: int, seed) -> tuple[float, float]:
    """Diagnostic estimate of ``log Z_mu = log E^{mu0}[exp(-Phi)]`` and its delta-method SE."""
    mu0 = GaussianMeasure.reference(target.basis)
    x = sample(mu0, n, seed)
    a = -target.evaluate(x)
    logz = float(logsumexp(a) - np.log(n))
    w = np.exp(a - logz)
    return logz, float(np.std(w, ddof=1) / np.sqrt(n))


def precision_solve(nu: GaussianMeasure, b: np.ndarray) -> np.ndarray:
    """``C^{-1} b`` using the covariance factor."""
    return cho_solve((nu.covariance_factor, True), b)
