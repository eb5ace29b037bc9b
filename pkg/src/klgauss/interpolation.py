"""Displacement interpolation between Gaussians and the strengthened chord inequality."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfiniteDivergenceError, InvalidArgumentError, NotPositiveError
from .measures import GaussianMeasure
from .objective import TargetSpec, objective_of_measure


def _sym_pow(A: np.ndarray, p: float, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    if vals[0] <= 0:
        raise NotPositiveError(f"{what} is not positive definite")
    return (vecs * vals**p) @ vecs.T


@dataclass(frozen=True, eq=False)
class DisplacementPath:
    """Optimal coupling ``x -> Lambda (x - m1) + m2`` pushing ``nu1`` onto ``nu2``."""

    nu1: GaussianMeasure
    nu2: GaussianMeasure
    lambda_map: np.ndarray

    def transport(self, x) -> np.ndarray:
        """Apply ``Lambda~`` to coefficient vector(s) ``x``."""
        x = np.asarray(x, dtype=float)
        return (x - self.nu1.mean) @ self.lambda_map.T + self.nu2.mean

    def at(self, t: float) -> GaussianMeasure:
        return interpolate(self, t)


def displacement_map(nu1: GaussianMeasure, nu2: GaussianMeasure) -> DisplacementPath:
    """``Lambda = C2^{1/2} (C2^{1/2} C1 C2^{1/2})^{-1/2} C2^{1/2}`` via eigendecompositions."""
    if nu1.dim != nu2.dim or not nu1.basis.same_as(nu2.basis):
        raise InvalidArgumentError("displacement map needs two measures on the same basis")
    C1, C2 = nu1.covariance, nu2.covariance
    R = _sym_pow(C2, 0.5, "C2")
    mid = _sym_pow(R @ C1 @ R, -0.5, "C2^1/2 C1 C2^1/2")
    Lam = R @ mid @ R
    Lam = 0.5 * (Lam + Lam.T)
    Lam.setflags(write=False)
    return DisplacementPath(nu1, nu2, Lam)


def interpolate(path: DisplacementPath, t: float) -> GaussianMeasure:
    """``nu_t = N(m_t, C_t)`` with ``C_t = A_t C1 A_t``, ``A_t = (1-t) I + t Lambda``.

    The endpoints are returned as the input measures; equal means or equal
    covariances are carried through unchanged.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"t must lie in [0, 1], got {t}")
    nu1, nu2 = path.nu1, path.nu2
    if t == 0.0:
        return nu1
    if t == 1.0:
        return nu2
    m1, m2 = nu1.mean, nu2.mean
    m_t = m1.copy() if np.array_equal(m1, m2) else (1 - t) * m1 + t * m2
    if np.array_equal(nu1.covariance_factor, nu2.covariance_factor):
        return GaussianMeasure(nu1.basis, m_t, nu1.covariance_factor)
    A = (1 - t) * np.eye(nu1.dim) + t * path.lambda_map
    C_t = A @ nu1.covariance @ A
    return GaussianMeasure.from_covariance(nu1.basis, m_t, 0.5 * (C_t + C_t.T))


def transport_cost_h1(path: DisplacementPath) -> float:
    """``E^{nu1} |x - Lambda~(x)|^2_{H1}`` in closed form."""
    lam = path.nu1.basis.eigenvalues
    dm = path.nu1.mean - path.nu2.mean
    D = np.eye(path.nu1.dim) - path.lambda_map
    S = D @ path.nu1.covariance @ D
    return float(np.sum(dm**2 / lam) + np.sum(np.diag(S) / lam))


def kappa_from_curvature(K: float, basis) -> float:
    """``kappa = 1 - K lambda_1`` for ``phi'' >= -K``; for the bridge ``lambda_1 = (L/pi)^2``.

    ``Phi + (K/2)|x|^2_{L2}`` is convex and ``|x|^2_{L2} <= lambda_1 |x|^2_{H1}``,
    so ``Phi`` is ``(1 - kappa)``-convex in the Cameron-Martin norm.
    """
    return 1.0 - max(float(K), 0.0) * float(basis.eigenvalues[0])


def kappa_for_target(target: TargetSpec) -> float:
    pot = target.potential
    curv = getattr(pot, "min_curvature", None)
    if curv is None:
        raise InvalidArgumentError("the potential does not declare a lower curvature bound")
    return kappa_from_curvature(-curv, target.basis)


@dataclass
class ConvexityReport:
    t: np.ndarray
    curve: np.ndarray
    chord: np.ndarray
    w2_h1: float
    kappa: float
    margins: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    def as_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "curve": self.curve.tolist(),
            "chord": self.chord.tolist(),
            "w2_h1": self.w2_h1,
            "kappa": self.kappa,
            "margins": self.margins.tolist(),
            "min_margin": self.min_margin,
        }


def convexity_check(nu1, nu2, target: TargetSpec, t_grid, kappa: float, method=None, part: str = "total") -> ConvexityReport:
    """Margins ``chord(t) - D(t) - kappa t(1-t)/2 W^2`` along the displacement path.

    ``part`` selects the objective component: ``"total"`` or
    ``"gaussian_kl"`` (the entropy-plus-Cameron-Martin term alone).
    """
    if part not in ("total", "gaussian_kl"):
        raise InvalidArgumentError(f"unknown objective part {part!r}")
    t = np.asarray(t_grid, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise InvalidArgumentError("t_grid must lie in [0, 1]")
    path = displacement_map(nu1, nu2)

    def D(nu):
        return getattr(objective_of_measure(nu, target, method), part)

    d1, d2 = D(nu1), D(nu2)
    if not (np.isfinite(d1) and np.isfinite(d2)):
        raise InfiniteDivergenceError("endpoint divergences must be finite")
    curve = np.array([D(interpolate(path, float(s))) for s in t])
    chord = (1 - t) * d1 + t * d2
    w2 = transport_cost_h1(path)
    margins = chord - curve - kappa * t * (1 - t) / 2 * w2
    return ConvexityReport(t, curve, chord, w2, float(kappa), margins)


def logdet_path(path: DisplacementPath, t_grid) -> np.ndarray:
    """``(1/gamma) log det C_t`` along the path."""
    return np.array([interpolate(path, float(s)).logdet_covariance / path.nu1.dim for s in t_grid])
