"""Divergences between probability vectors on a finite state space.

Finite state spaces are where KL identities can be checked to rounding
error, so this module is the reference laboratory for the Gaussian code.
Infinite divergences are returned as ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InfiniteDivergenceError, InvalidArgumentError


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Probability vector ``probs`` (non-negative, summing to one within 1e-12)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size < 1:
            raise InvalidArgumentError("a distribution needs at least one state")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidArgumentError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    @classmethod
    def normalized(cls, weights) -> "DiscreteDist":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    def mix(self, other: "DiscreteDist", t: float = 0.5) -> "DiscreteDist":
        """``(1 - t) self + t other``, renormalised against rounding."""
        _check_lengths(self, other)
        return DiscreteDist.normalized((1 - t) * self.probs + t * other.probs)

    def merge(self, i: int, j: int) -> "DiscreteDist":
        """Image under the map sending state ``j`` onto state ``i``."""
        p = self.probs.copy()
        p[i] += p[j]
        return DiscreteDist.normalized(np.delete(p, j))


def _check_lengths(*dists):
    n = len(dists[0])
    if any(len(d) != n for d in dists):
        raise InvalidArgumentError("distributions must have equal lengths")


def kl_discrete(nu: DiscreteDist, mu: DiscreteDist) -> float:
    """``sum nu_i log(nu_i / mu_i)`` with ``0 log 0 = 0``; ``inf`` if ``nu`` is not ``<< mu``."""
    _check_lengths(nu, mu)
    p, q = nu.probs, mu.probs
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    ps, qs = p[support], q[support]
    return max(float(np.sum(ps * (np.log(ps) - np.log(qs)))), 0.0)


def tv_discrete(nu: DiscreteDist, mu: DiscreteDist) -> float:
    _check_lengths(nu, mu)
    return 0.5 * float(np.sum(np.abs(nu.probs - mu.probs)))


def hellinger_discrete(nu: DiscreteDist, mu: DiscreteDist) -> float:
    """Hellinger integral ``sum sqrt(nu_i mu_i)``; equals ``1 - D_hell**2``."""
    _check_lengths(nu, mu)
    return min(float(np.sum(np.sqrt(nu.probs * mu.probs))), 1.0)


def parallelogram_terms(nu_n: DiscreteDist, nu_m: DiscreteDist, mu: DiscreteDist) -> dict:
    """Both sides of the KL parallelogram identity around the midpoint ``(nu_n + nu_m)/2``."""
    _check_lengths(nu_n, nu_m, mu)
    mid = nu_n.mix(nu_m, 0.5)
    terms = {
        "kl_n": kl_discrete(nu_n, mu),
        "kl_m": kl_discrete(nu_m, mu),
        "kl_mid": kl_discrete(mid, mu),
        "kl_n_mid": kl_discrete(nu_n, mid),
        "kl_m_mid": kl_discrete(nu_m, mid),
    }
    bad = [k for k, v in terms.items() if math.isinf(v)]
    if bad:
        raise InfiniteDivergenceError(f"parallelogram identity needs finite divergences; infinite: {bad}")
    terms["lhs"] = terms["kl_n"] + terms["kl_m"]
    terms["rhs"] = 2 * terms["kl_mid"] + terms["kl_n_mid"] + terms["kl_m_mid"]
    return terms


def parallelogram_residual(nu_n: DiscreteDist, nu_m: DiscreteDist, mu: DiscreteDist) -> float:
    t = parallelogram_terms(nu_n, nu_m, mu)
    return abs(t["lhs"] - t["rhs"])


def dv_lower_bound(nu: DiscreteDist, mu: DiscreteDist, theta) -> float:
    """Donsker-Varadhan functional ``E^nu[theta] - log E^mu[exp(theta)]``."""
    _check_lengths(nu, mu)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != nu.probs.shape:
        raise InvalidArgumentError("theta must have one entry per state")
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("theta must be finite")
    return float(nu.probs @ theta - logsumexp(theta, b=mu.probs))


def optimal_dv_theta(nu: DiscreteDist, mu: DiscreteDist) -> np.ndarray:
    """``log(nu / mu)``, the maximiser of the Donsker-Varadhan functional (equal supports)."""
    _check_lengths(nu, mu)
    if np.any((nu.probs > 0) != (mu.probs > 0)):
        raise InvalidArgumentError("optimal theta needs equal supports")
    theta = np.zeros_like(nu.probs)
    s = nu.probs > 0
    theta[s] = np.log(nu.probs[s]) - np.log(mu.probs[s])
    return theta
