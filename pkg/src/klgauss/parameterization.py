"""Precision-shift parameterisation ``C^{-1} = C0^{-1} + Gamma``.

Four families of shifts are supported:

``full``
    an arbitrary symmetric ``gamma x gamma`` matrix;
``constant``
    ``Gamma = beta I``;
``multiplication``
    ``(Gamma u)(t) = v(t) u(t)`` for a grid function ``v``, discretised with
    the quadrature weights inside the bilinear form;
``finite_rank``
    the precision restricted to the leading ``rank`` modes is a free
    symmetric block, the remaining modes keep ``C0``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NotPositiveError
from .measures import GaussianMeasure, rng_for
from .spectral import SpectralBasis

FAMILIES = ("full", "constant", "multiplication", "finite_rank")

# blocks beyond this condition number are treated as rank deficient
FINITE_RANK_MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class PrecisionShift:
    """One member of a precision-shift family; ``data`` depends on ``variant``.

    ============== =====================================================
    variant        data
    ============== =====================================================
    full           symmetric ``(gamma, gamma)`` matrix ``Gamma``
    constant       0-d array holding ``beta``
    multiplication grid function ``v`` of shape ``(G,)``
    finite_rank    symmetric ``(rank, rank)`` precision block
    ============== =====================================================
    """

    variant: str
    data: np.ndarray

    def __post_init__(self):
        if self.variant not in FAMILIES:
            raise InvalidArgumentError(f"unknown shift family {self.variant!r}; expected one of {FAMILIES}")
        d = np.array(self.data, dtype=float)
        if not np.all(np.isfinite(d)):
            raise InvalidArgumentError(f"{self.variant} shift has non-finite entries")
        if self.variant in ("full", "finite_rank"):
            if d.ndim != 2 or d.shape[0] != d.shape[1]:
                raise InvalidArgumentError(f"{self.variant} shift needs a square matrix")
            if np.max(np.abs(d - d.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(d), initial=0.0)):
                raise InvalidArgumentError(f"{self.variant} shift matrix must be symmetric")
            d = 0.5 * (d + d.T)
        elif self.variant == "constant":
            d = d.reshape(())
        elif d.ndim != 1:
            raise InvalidArgumentError("multiplication potential must be a 1-D grid function")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    # constructors ---------------------------------------------------------
    @classmethod
    def full(cls, matrix) -> "PrecisionShift":
        return cls("full", matrix)

    @classmethod
    def constant(cls, beta: float) -> "PrecisionShift":
        return cls("constant", beta)

    @classmethod
    def multiplication(cls, v) -> "PrecisionShift":
        return cls("multiplication", v)

    @classmethod
    def finite_rank(cls, block) -> "PrecisionShift":
        return cls("finite_rank", block)

    @classmethod
    def zero(cls, variant: str, basis: SpectralBasis, rank: int | None = None) -> "PrecisionShift":
        """The member of ``variant`` that reproduces ``C0`` exactly."""
        g = basis.mode_count
        if variant == "full":
            return cls.full(np.zeros((g, g)))
        if variant == "constant":
            return cls.constant(0.0)
        if variant == "multiplication":
            return cls.multiplication(np.zeros(basis.grid_size))
        if variant == "finite_rank":
            if rank is None or not 1 <= rank <= g:
                raise InvalidArgumentError(f"finite_rank needs 1 <= rank <= {g}, got {rank}")
            return cls.finite_rank(np.diag(1.0 / basis.eigenvalues[:rank]))
        raise InvalidArgumentError(f"unknown shift family {variant!r}")

    @property
    def rank(self) -> int | None:
        return self.data.shape[0] if self.variant == "finite_rank" else None

    @property
    def beta(self) -> float:
        return float(self.data)

    # flat parameter vector ------------------------------------------------
    def parameters(self) -> np.ndarray:
        if self.variant in ("full", "finite_rank"):
            return self.data[np.triu_indices(self.data.shape[0])].copy()
        return np.atleast_1d(self.data).astype(float).copy()

    def with_parameters(self, theta) -> "PrecisionShift":
        theta = np.asarray(theta, dtype=float)
        if self.variant in ("full", "finite_rank"):
            k = self.data.shape[0]
            M = np.zeros((k, k))
            M[np.triu_indices(k)] = theta
            M = M + np.triu(M, 1).T
            return PrecisionShift(self.variant, M)
        if self.variant == "constant":
            return PrecisionShift.constant(float(theta[0]))
        return PrecisionShift.multiplication(theta)

    def check_compatible(self, basis: SpectralBasis):
        g = basis.mode_count
        if self.variant == "full" and self.data.shape != (g, g):
            raise InvalidArgumentError(f"full shift is {self.data.shape}, basis has gamma={g}")
        if self.variant == "finite_rank" and not 1 <= self.data.shape[0] <= g:
            raise InvalidArgumentError(f"finite_rank block of size {self.data.shape[0]} exceeds gamma={g}")
        if self.variant == "multiplication" and self.data.shape != (basis.grid_size,):
            raise InvalidArgumentError(
                f"potential has {self.data.shape[0]} grid values, basis grid has {basis.grid_size}"
            )

    # operator in the eigenbasis --------------------------------------------
    def matrix(self, basis: SpectralBasis) -> np.ndarray:
        """``Gamma_{alpha beta}`` so that the precision is ``diag(1/lambda) + Gamma``."""
        self.check_compatible(basis)
        g = basis.mode_count
        if self.variant == "full":
            return np.array(self.data)
        if self.variant == "constant":
            return self.beta * np.eye(g)
        if self.variant == "multiplication":
            E = basis.eigenfunction_table
            return (E * (basis.quadrature_weights * self.data)) @ E.T
        r = self.rank
        G = np.zeros((g, g))
        G[:r, :r] = self.data - np.diag(1.0 / basis.eigenvalues[:r])
        return G

    def parameter_gradient(self, grad_precision: np.ndarray, basis: SpectralBasis) -> np.ndarray:
        """Chain rule from a symmetric gradient w.r.t. the precision matrix to the flat parameters."""
        Gp = 0.5 * (grad_precision + grad_precision.T)
        if self.variant == "constant":
            return np.array([np.trace(Gp)])
        if self.variant == "multiplication":
            E = basis.eigenfunction_table
            return basis.quadrature_weights * np.einsum("aj,ab,bj->j", E, Gp, E)
        k = self.data.shape[0]
        block = Gp[:k, :k]
        iu = np.triu_indices(k)
        return np.where(iu[0] == iu[1], 1.0, 2.0) * block[iu]

    def to_dict(self) -> dict:
        return {"family": self.variant, "data": np.asarray(self.data).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PrecisionShift":
        return cls(d["family"], d["data"])


def assemble_precision(shift: PrecisionShift, basis: SpectralBasis) -> np.ndarray:
    """Matrix of ``C0^{-1} + Gamma`` in the eigenbasis."""
    shift.check_compatible(basis)
    lam = basis.eigenvalues
    if shift.variant == "finite_rank":
        P = np.diag(1.0 / lam)
        r = shift.rank
        P[:r, :r] = shift.data
        return P
    P = shift.matrix(basis) + np.diag(1.0 / lam)
    return 0.5 * (P + P.T)


def positivity_margin(shift: PrecisionShift, basis: SpectralBasis) -> float:
    """Smallest eigenvalue of the assembled precision; admissible iff positive."""
    if shift.variant == "constant":
        return float(1.0 / basis.eigenvalues[0] + shift.beta)
    return float(np.linalg.eigvalsh(assemble_precision(shift, basis))[0])


def finite_rank_condition(shift: PrecisionShift) -> float:
    return float(np.linalg.cond(shift.data))


def assemble_covariance(shift: PrecisionShift, mean, basis: SpectralBasis) -> GaussianMeasure:
    """``N(mean, (C0^{-1} + Gamma)^{-1})``; raises :class:`NotPositiveError` when inadmissible."""
    margin = positivity_margin(shift, basis)
    if not margin > 0:
        raise NotPositiveError(
            f"precision C0^-1 + Gamma is not strictly positive (smallest eigenvalue {margin:.6g})"
        )
    mean = np.zeros(basis.mode_count) if mean is None else np.asarray(mean, dtype=float)
    if shift.variant == "finite_rank":
        cond = finite_rank_condition(shift)
        if cond > FINITE_RANK_MAX_CONDITION:
            raise NotPositiveError(f"finite-rank block is numerically singular (condition number {cond:.3g})")
        r = shift.rank
        C = np.diag(basis.eigenvalues).astype(float)
        C[:r, :r] = np.linalg.inv(shift.data)
        nu = GaussianMeasure.from_covariance(basis, mean, C)
        P = assemble_precision(shift, basis)
        P.setflags(write=False)
        return GaussianMeasure(basis, nu.mean, nu.covariance_factor, P)
    return GaussianMeasure.from_precision(basis, mean, assemble_precision(shift, basis))


def weighted_hs_norm(shift: PrecisionShift, basis: SpectralBasis, modes: int | None = None) -> float:
    """Frobenius norm of ``sqrt(lambda_a) Gamma_ab sqrt(lambda_b)`` over the leading ``modes``."""
    k = basis.mode_count if modes is None else modes
    s = np.sqrt(basis.eigenvalues[:k])
    G = shift.matrix(basis)[:k, :k]
    return float(np.linalg.norm(s[:, None] * G * s[None, :]))


def shift_distance(a: PrecisionShift, b: PrecisionShift, basis: SpectralBasis) -> float:
    """Weighted Hilbert-Schmidt distance between two shifts."""
    s = np.sqrt(basis.eigenvalues)
    D = a.matrix(basis) - b.matrix(basis)
    return float(np.linalg.norm(s[:, None] * D * s[None, :]))


@dataclass
class FeldmanHajekReport:
    weighted_hs_norm: float
    margin: float
    equivalent: bool
    growth: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["growth"] = {str(k): v for k, v in self.growth.items()}
        return d


def feldman_hajek_report(shift: PrecisionShift, basis: SpectralBasis) -> FeldmanHajekReport:
    """Weighted HS norm, positivity margin and the norm over ``gamma/4, gamma/2, gamma`` leading modes."""
    g = basis.mode_count
    levels = sorted({max(1, g // 4), max(1, g // 2), g})
    s = np.sqrt(basis.eigenvalues)
    W = s[:, None] * shift.matrix(basis) * s[None, :]
    growth = {k: float(np.linalg.norm(W[:k, :k])) for k in levels}
    margin = positivity_margin(shift, basis)
    return FeldmanHajekReport(float(np.linalg.norm(W)), margin, bool(margin > 0), growth)


def form_bound_constants(shift: PrecisionShift, basis: SpectralBasis, n0: int) -> tuple[float, float]:
    """Constants ``(delta, K)`` with ``<x, Gamma x> <= delta <x, C0^{-1} x> + K |x|^2``.

    ``delta`` is the weighted HS norm of ``Gamma`` with its leading
    ``n0 x n0`` block removed and ``K`` the spectral norm of that block.
    """
    G = shift.matrix(basis)
    s = np.sqrt(basis.eigenvalues)
    tail = G.copy()
    tail[:n0, :n0] = 0.0
    delta = float(np.linalg.norm(s[:, None] * tail * s[None, :]))
    K = float(np.linalg.norm(G[:n0, :n0], 2)) if n0 > 0 else 0.0
    return delta, K


@dataclass
class PrecisionEquivalenceReport:
    log_density_deviation: float
    mean_error: float
    covariance_error: float
    covariance_scale: float
    effective_sample_size: float
    margin: float

    def as_dict(self) -> dict:
        return asdict(self)


def precision_equivalence_check(theta, basis: SpectralBasis, n: int, seed) -> PrecisionEquivalenceReport:
    """Compare ``mu0`` reweighted by ``exp(-1/2 int theta x^2)`` with ``N(0, (C0^{-1} + theta)^{-1})``.

    Importance-weighted moments give a Monte Carlo comparison; the
    log-density difference at 100 reference draws must be constant, and its
    spread is reported as ``log_density_deviation``.
    """
    theta = np.asarray(theta, dtype=float)
    shift = PrecisionShift.multiplication(theta)
    shift.check_compatible(basis)
    floor = -1.0 / basis.eigenvalues[0]
    if not np.min(theta) > floor:
        raise NotPositiveError(f"inf theta = {np.min(theta):.6g} must exceed {floor:.6g}")
    nu = assemble_covariance(shift, None, basis)
    margin = positivity_margin(shift, basis)
    mu0 = GaussianMeasure.reference(basis)
    w = basis.quadrature_weights
    E = basis.eigenfunction_table

    def log_reweighted(x):
        xg = x @ E
        return mu0.log_density(x) - 0.5 * np.sum(w * theta * xg**2, axis=-1)

    ss_is, ss_pts = np.random.SeedSequence(seed).spawn(2)
    x = mu0.mean + rng_for(ss_is).standard_normal((n, basis.mode_count)) * np.sqrt(basis.eigenvalues)
    logw = -0.5 * np.sum(w * theta * (x @ E) ** 2, axis=-1)
    a = np.exp(logw - logw.max())
    a /= a.sum()
    m_hat = a @ x
    C_hat = (x - m_hat).T @ ((x - m_hat) * a[:, None])
    C = nu.covariance

    pts = rng_for(ss_pts).standard_normal((100, basis.mode_count)) * np.sqrt(basis.eigenvalues)
    diff = log_reweighted(pts) - nu.log_density(pts)
    return PrecisionEquivalenceReport(
        log_density_deviation=float(np.max(np.abs(diff - diff[0]))),
        mean_error=float(np.max(np.abs(m_hat))),
        covariance_error=float(np.max(np.abs(C_hat - C))),
        covariance_scale=float(np.max(np.abs(C))),
        effective_sample_size=float(1.0 / np.sum(a**2)),
        margin=margin,
    )
