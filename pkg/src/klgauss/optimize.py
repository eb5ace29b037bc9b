"""Minimisation of the KL objective over Gaussian families and Gaussian mixtures.

The single-Gaussian solver is natural-gradient descent (Gaussian Fisher
metric) with Armijo backtracking.  Steps that would
leave the admissible set are shortened by a fraction-to-the-boundary rule.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from .errors import InvalidArgumentError, NotPositiveError
from .measures import GaussianMeasure, MixtureMeasure, hellinger_distance, kl_mixture_mc, tv_bounds
from .objective import MIN_MARGIN, ObjectiveValue, Quadrature, RegularizationSpec, TargetSpec, evaluate
from .spectral import sobolev_weights
from .parameterization import PrecisionShift, assemble_covariance, positivity_margin, shift_distance

FRACTION_TO_BOUNDARY = 0.9
DEDUP_TOLERANCE = 1e-4
TAIL_LENGTH = 10


@dataclass(frozen=True)
class StepRule:
    """Backtracking parameters."""

    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise InvalidArgumentError(f"shrink factor must lie in (0, 1), got {self.shrink}")
        if not self.initial_step > 0:
            raise InvalidArgumentError("initial step must be positive")
        if not 0 < self.sufficient_decrease < 1:
            raise InvalidArgumentError("sufficient-decrease constant must lie in (0, 1)")


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-6
    step_rule: StepRule = field(default_factory=StepRule)
    boundary_margin: float = 1e-8
    seed: int = 0
    fix_mean: bool = False
    fix_shift: bool = False
    method: object = field(default_factory=Quadrature)

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise InvalidArgumentError("gradient tolerance must be positive")
        if not self.boundary_margin >= MIN_MARGIN:
            raise InvalidArgumentError(f"boundary_margin must be >= {MIN_MARGIN:g}")
        if self.max_iterations < 0:
            raise InvalidArgumentError("max_iterations must be non-negative")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    total: float
    gradient_norm: float
    margin: float
    mean_step: float
    shift_step: float


@dataclass
class Solution:
    mean: np.ndarray
    shift: PrecisionShift
    objective: ObjectiveValue
    iterations: int
    converged: bool
    gradient_norm: float
    trace: list
    tail: list
    basis: object = None
    start_index: int | None = None

    def measure(self) -> GaussianMeasure:
        return assemble_covariance(self.shift, self.mean, self.basis)

    def tail_measures(self) -> list:
        return [assemble_covariance(s, m, self.basis) for m, s in self.tail]

    def summary(self) -> dict:
        return {
            "objective": self.objective.as_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "margin": self.trace[-1].margin if self.trace else None,
        }


def _max_workers(n_tasks: int) -> int:
    env = os.environ.get("KL_GAUSS_THREADS")
    cap = int(env) if env else min(4, os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def h1_distance(m1, m2, basis) -> float:
    """Cameron-Martin distance between two coefficient vectors."""
    d = np.asarray(m1) - np.asarray(m2)
    return float(np.sqrt(np.sum(d**2 / basis.eigenvalues)))


def solution_distance(a: Solution, b: Solution) -> float:
    return h1_distance(a.mean, b.mean, a.basis) + shift_distance(a.shift, b.shift, a.basis)


# --------------------------------------------------------------------------
# single Gaussian
# --------------------------------------------------------------------------


def shift_fisher(shift: PrecisionShift, C: np.ndarray, basis, reg=None) -> np.ndarray:
    """Fisher information ``1/2 tr(C dP C dP)`` of the shift parameters at covariance ``C``.

    For multiplication potentials the Hessian of the Sobolev penalty is added,
    since it is part of the objective's exact curvature.
    """
    if shift.variant == "constant":
        return np.array([[0.5 * np.sum(C * C)]])
    if shift.variant == "multiplication":
        E = basis.eigenfunction_table
        w = basis.quadrature_weights
        S = E.T @ C @ E
        F = 0.5 * np.outer(w, w) * S**2
        if reg is not None and reg.delta > 0:
            B = E * w
            F = F + 2 * reg.delta * (B.T * sobolev_weights(reg.r, basis)) @ B
        return F
    k = shift.data.shape[0]
    return _sym_fisher(C[:k, :k], np.triu_indices(k))


def _sym_fisher(Ck, iu):
    a, b = iu
    Caa = Ck[a[:, None], a[None, :]]
    Cbb = Ck[b[:, None], b[None, :]]
    Cab = Ck[a[:, None], b[None, :]]
    Cba = Ck[b[:, None], a[None, :]]
    # tr(C B_i C B_j) with B = e_a e_b^T + e_b e_a^T (halved on the diagonal)
    T = 2 * (Caa * Cbb + Cab * Cba)
    s = np.where(a == b, 0.5, 1.0)
    return 0.5 * T * s[:, None] * s[None, :]


def _psd_solve(F, g, rcond=1e-13):
    """Minimum-norm solution of ``F d = g`` for symmetric positive semi-definite ``F``."""
    vals, vecs = np.linalg.eigh(0.5 * (F + F.T))
    cut = rcond * max(vals[-1], 0.0)
    inv = np.where(vals > cut, 1.0 / np.where(vals > cut, vals, 1.0), 0.0)
    return vecs @ (inv * (vecs.T @ g))


class _Problem:
    """Flat-vector view of ``(mean, shift)`` with frozen blocks masked out."""

    def __init__(self, target, template: PrecisionShift, reg, opts: SolveOptions):
        self.target, self.template, self.reg, self.opts = target, template, reg, opts
        self.basis = target.basis
        self.g = self.basis.mode_count

    def split(self, x):
        return x[: self.g], self.template.with_parameters(x[self.g :])

    def join(self, mean, shift):
        return np.concatenate([np.asarray(mean, dtype=float), shift.parameters()])

    def margin(self, x) -> float:
        return positivity_margin(self.split(x)[1], self.basis)

    def value_grad(self, x):
        m, s = self.split(x)
        val, gm, gs = evaluate(m, s, self.target, self.reg, self.opts.method, need_grad=True)
        return val, np.concatenate([gm, gs])

    def direction(self, x, g):
        """Natural-gradient direction; frozen blocks get zero."""
        m, s = self.split(x)
        C = assemble_covariance(s, m, self.basis).covariance
        dm = np.zeros(self.g) if self.opts.fix_mean else -C @ g[: self.g]
        if self.opts.fix_shift:
            ds = np.zeros(g.size - self.g)
        else:
            ds = -_psd_solve(shift_fisher(s, C, self.basis, self.reg), g[self.g :])
        return np.concatenate([dm, ds])


def minimize(target: TargetSpec, family: PrecisionShift, init, reg=None, opts=None) -> Solution:
    """Minimise the (regularised) KL objective over ``family``.

    Parameters
    ----------
    target : TargetSpec
    family : PrecisionShift
        Template fixing the family (and rank for ``finite_rank``).
    init : tuple
        ``(mean, shift)``; ``mean`` may be ``None`` for zero.
    reg : RegularizationSpec, optional
    opts : SolveOptions, optional

    Returns
    -------
    Solution
        ``converged`` is false when the iteration budget runs out.

    Notes
    -----
    Search directions are natural gradients: the mean gradient is multiplied
    by ``C`` and the shift gradient by the pseudo-inverse of the Gaussian
    Fisher information.  The gradient norm used for the stopping test is the
    matching dual norm ``sqrt(-g . d)``.
    """
    reg = RegularizationSpec() if reg is None else reg
    opts = SolveOptions() if opts is None else opts
    basis = target.basis
    mean0, shift0 = init
    mean0 = np.zeros(basis.mode_count) if mean0 is None else np.asarray(mean0, dtype=float)
    if shift0.variant != family.variant or shift0.data.shape != family.data.shape:
        raise InvalidArgumentError("initial shift does not belong to the requested family")
    prob = _Problem(target, family, reg, opts)
    x = prob.join(mean0, shift0)
    margin = prob.margin(x)
    if margin < opts.boundary_margin:
        raise NotPositiveError(f"initial point has positivity margin {margin:.3g} < {opts.boundary_margin:g}")

    rule = opts.step_rule
    val, g = prob.value_grad(x)
    f = val.total
    d = prob.direction(x, g)
    gnorm = float(np.sqrt(max(-(g @ d), 0.0)))
    trace = [TraceRecord(0, f, gnorm, margin, 0.0, 0.0)]
    tail = [prob.split(x)]
    it = 0
    while it < opts.max_iterations and gnorm > opts.gradient_tolerance:
        slope = g @ d
        alpha = rule.initial_step
        # fraction-to-the-boundary on the positivity margin
        while prob.margin(x + alpha * d) < opts.boundary_margin and alpha > 1e-300:
            alpha *= FRACTION_TO_BOUNDARY
        accepted = False
        for _ in range(rule.max_backtracks):
            xn = x + alpha * d
            try:
                if prob.margin(xn) < opts.boundary_margin:
                    raise NotPositiveError("step leaves the admissible set")
                vn, gn = prob.value_grad(xn)
            except NotPositiveError:
                alpha *= rule.shrink
                continue
            fn = vn.total
            noise = 1e-14 * max(1.0, abs(f))
            if np.isfinite(fn) and (fn <= f + rule.sufficient_decrease * alpha * slope or (fn <= f and f - fn <= noise)):
                accepted = True
                break
            alpha *= rule.shrink
        if not accepted or np.all(np.abs(xn - x) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            # objective is flat to rounding along d: no further progress possible
            break
        it += 1
        mo, so = prob.split(x)
        mn, sn = prob.split(xn)
        x, g, val, f = xn, gn, vn, fn
        d = prob.direction(x, g)
        gnorm = float(np.sqrt(max(-(g @ d), 0.0)))
        trace.append(
            TraceRecord(it, f, gnorm, prob.margin(x), h1_distance(mo, mn, basis), shift_distance(so, sn, basis))
        )
        tail.append((mn, sn))
        if len(tail) > TAIL_LENGTH:
            tail.pop(0)
    m, s = prob.split(x)
    return Solution(
        mean=m,
        shift=s,
        objective=val,
        iterations=it,
        converged=gnorm <= opts.gradient_tolerance,
        gradient_norm=gnorm,
        trace=trace,
        tail=tail,
        basis=basis,
    )


def multistart(target: TargetSpec, family: PrecisionShift, inits, reg=None, opts=None) -> list:
    """Run :func:`minimize` from every init, deduplicate and rank by objective.

    Two solutions are the same when their H1 mean distance plus weighted
    HS shift distance is at most ``1e-4``.  Inadmissible inits are skipped;
    if every init is inadmissible a :class:`NotPositiveError` is raised.
    """
    inits = list(inits)
    if not inits:
        raise InvalidArgumentError("multistart needs at least one init")

    def run(i):
        try:
            sol = minimize(target, family, inits[i], reg, opts)
        except NotPositiveError:
            return None
        sol.start_index = i
        return sol

    with ThreadPoolExecutor(max_workers=_max_workers(len(inits))) as pool:
        results = list(pool.map(run, range(len(inits))))
    sols = [r for r in results if r is not None]
    if not sols:
        raise NotPositiveError("every initial point is inadmissible")
    sols.sort(key=lambda s: (s.objective.total, s.start_index))
    kept: list = []
    for s in sols:
        if all(solution_distance(s, k) > DEDUP_TOLERANCE for k in kept):
            kept.append(s)
    return kept


# --------------------------------------------------------------------------
# mixtures
# --------------------------------------------------------------------------


@dataclass
class MixtureSolution:
    mixture: MixtureMeasure
    means: list
    shifts: list
    weights: np.ndarray
    objective: float
    standard_error: float
    iterations: int
    converged: bool
    gradient_norm: float
    trace: list
    degenerate_components: list

    def summary(self) -> dict:
        return {
            "objective": self.objective,
            "standard_error": self.standard_error,
            "weights": [float(w) for w in self.weights],
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "degenerate_components": self.degenerate_components,
        }


@dataclass(frozen=True)
class MixtureOptions:
    """Optimisation budget for mixtures; the objective is a fixed-seed MC surrogate."""

    max_iterations: int = 300
    gradient_tolerance: float = 1e-6
    fd_step: float = 1e-6
    n: int = 20_000
    seed: int = 0
    final_n: int = 1_000_000
    final_seed: int = 1
    step_rule: StepRule = field(default_factory=StepRule)
    boundary_margin: float = 1e-8


def _build_mixture(theta, K, g, template, basis):
    logits = theta[:K]
    p = np.exp(log_softmax(logits))
    p = p / p.sum()
    size = g + template.parameters().size
    comps, means, shifts = [], [], []
    for i in range(K):
        block = theta[K + i * size : K + (i + 1) * size]
        m, s = block[:g], template.with_parameters(block[g:])
        comps.append(assemble_covariance(s, m, basis))
        means.append(m)
        shifts.append(s)
    return MixtureMeasure(tuple(comps), p), means, shifts


def minimize_mixture(target: TargetSpec, component_family: PrecisionShift, n_components: int, init, opts=None) -> MixtureSolution:
    """Fit a ``n_components`` Gaussian mixture by descent on a fixed-seed MC objective.

    Parameters
    ----------
    init : dict
        ``{"weights": (K,), "means": [K x (gamma,)], "shifts": [K PrecisionShift]}``.
    opts : MixtureOptions, optional

    Notes
    -----
    Weights are softmax logits.  The surrogate uses equal per-component
    draw blocks so that it is smooth in the weights; gradients are central
    differences of that surrogate.  The reported objective is a fresh
    stratified (proportional) estimate with ``final_n`` draws.
    """
    opts = MixtureOptions() if opts is None else opts
    basis = target.basis
    g = basis.mode_count
    K = int(n_components)
    if K < 1:
        raise InvalidArgumentError("n_components must be >= 1")
    w0 = np.asarray(init["weights"], dtype=float)
    if w0.shape != (K,) or np.any(w0 <= 0):
        raise InvalidArgumentError("initial weights must be K positive numbers")
    if len(init["means"]) != K or len(init["shifts"]) != K:
        raise InvalidArgumentError("one initial mean and shift per component")
    theta = [np.log(w0 / w0.sum())]
    for m, s in zip(init["means"], init["shifts"]):
        if s.variant != component_family.variant:
            raise InvalidArgumentError("initial shift does not belong to the component family")
        if positivity_margin(s, basis) < opts.boundary_margin:
            raise NotPositiveError("an initial component is inadmissible")
        theta.append(np.asarray(m, dtype=float))
        theta.append(s.parameters())
    x = np.concatenate(theta)
    size = g + component_family.parameters().size

    def admissible(v) -> bool:
        for i in range(K):
            s = component_family.with_parameters(v[K + i * size + g : K + (i + 1) * size])
            if positivity_margin(s, basis) < opts.boundary_margin:
                return False
        return True

    def fval(v) -> float:
        mix = _build_mixture(v, K, g, component_family, basis)[0]
        return kl_mixture_mc(mix, target, opts.n, opts.seed, allocation="equal")[0]

    def fgrad(v):
        grad = np.empty_like(v)
        for i in range(v.size):
            h = opts.fd_step * max(1.0, abs(v[i]))
            e = np.zeros_like(v)
            e[i] = h
            grad[i] = (fval(v + e) - fval(v - e)) / (2 * h)
        # logits are defined up to a common constant
        grad[:K] -= grad[:K].mean()
        return grad

    rule = opts.step_rule

    def direction(v, grad):
        # per-component Gaussian Fisher scaled by 1/p_i; softmax Fisher for the logits
        mix, _, shifts = _build_mixture(v, K, g, component_family, basis)
        p = mix.weights
        d = np.empty_like(grad)
        d[:K] = -_psd_solve(np.diag(p) - np.outer(p, p), grad[:K])
        for i, (comp, s) in enumerate(zip(mix.components, shifts)):
            lo = K + i * size
            Ci = comp.covariance
            scale = 1.0 / max(p[i], 1e-12)
            d[lo : lo + g] = -scale * (Ci @ grad[lo : lo + g])
            d[lo + g : lo + size] = -scale * _psd_solve(shift_fisher(s, Ci, basis), grad[lo + g : lo + size])
        return d

    f = fval(x)
    gr = fgrad(x)
    d = direction(x, gr)
    gnorm = float(np.sqrt(max(-(gr @ d), 0.0)))
    trace = [{"iteration": 0, "total": f, "gradient_norm": gnorm}]
    it = 0
    while it < opts.max_iterations and gnorm > opts.gradient_tolerance:
        alpha = rule.initial_step
        while not admissible(x + alpha * d) and alpha > 1e-300:
            alpha *= FRACTION_TO_BOUNDARY
        accepted = False
        for _ in range(rule.max_backtracks):
            xn = x + alpha * d
            try:
                fn = fval(xn) if admissible(xn) else np.inf
            except NotPositiveError:
                fn = np.inf
            if np.isfinite(fn) and (fn <= f + rule.sufficient_decrease * alpha * (gr @ d) or (fn <= f and f - fn <= 1e-14 * max(1.0, abs(f)))):
                accepted = True
                break
            alpha *= rule.shrink
        if not accepted or np.all(np.abs(xn - x) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            break
        it += 1
        x, f = xn, fn
        gr = fgrad(x)
        d = direction(x, gr)
        gnorm = float(np.sqrt(max(-(gr @ d), 0.0)))
        trace.append({"iteration": it, "total": f, "gradient_norm": gnorm})

    mix, means, shifts = _build_mixture(x, K, g, component_family, basis)
    est, se = kl_mixture_mc(mix, target, opts.final_n, opts.final_seed, allocation="proportional")
    return MixtureSolution(
        mixture=mix,
        means=means,
        shifts=shifts,
        weights=mix.weights,
        objective=est,
        standard_error=se,
        iterations=it,
        converged=gnorm <= opts.gradient_tolerance,
        gradient_norm=gnorm,
        trace=trace,
        degenerate_components=[i for i, w in enumerate(mix.weights) if w < 1e-8],
    )


# --------------------------------------------------------------------------
# convergence certificate
# --------------------------------------------------------------------------


@dataclass
class ConvergenceCertificate:
    tv_upper: np.ndarray
    tail_modulus: np.ndarray
    hellinger_to_final: np.ndarray
    hellinger_to_comparisons: np.ndarray
    cauchy: bool

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def convergence_certificate(tail, nu_final: GaussianMeasure, comparison_points=(), floor: float = 1e-6) -> ConvergenceCertificate:
    """Total-variation Cauchy check on the last iterates of a run.

    ``tail_modulus[k]`` is the largest pairwise TV upper bound among tail
    iterates ``k, k+1, ...``.  The tail is flagged non-Cauchy when this
    modulus fails to decrease strictly while it is still above ``floor``
    (the level where closed-form divergences lose relative accuracy).
    """
    tail = list(tail)
    if len(tail) < 3:
        raise InvalidArgumentError("a certificate needs at least 3 tail iterates")
    n = len(tail)
    U = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            U[i, j] = U[j, i] = tv_bounds(tail[i], tail[j])[1]
    T = np.array([U[k:, k:].max() for k in range(n)])
    cauchy = True
    for k in range(n - 2):
        if T[k] > floor and not T[k + 1] < T[k]:
            cauchy = False
    hf = np.array([hellinger_distance(nu, nu_final) for nu in tail])
    hc = np.array([hellinger_distance(nu, nu_final) for nu in comparison_points])
    return ConvergenceCertificate(U, T, hf, hc, cauchy)


def with_options(opts: SolveOptions, **changes) -> SolveOptions:
    return replace(opts, **changes)
