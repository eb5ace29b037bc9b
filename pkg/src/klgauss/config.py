"""Run configuration schema and builders for the command-line front end."""

from __future__ import annotations

import json
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import InvalidArgumentError, NotPositiveError
from .objective import Growth, MonteCarlo, Quadrature, RegularizationSpec, make_potential, make_target
from .optimize import MixtureOptions, SolveOptions, StepRule
from .parameterization import PrecisionShift, positivity_margin
from .spectral import make_brownian_bridge_basis, make_euclidean_basis, make_torus_fractional_basis

SCENARIOS = ("double_well", "approximate", "mixture", "interpolate", "diagnose", "sequence_study")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BasisConfig(_Strict):
    kind: Literal["bridge", "torus", "euclidean"]
    length: float = 2.0
    s: Optional[float] = None
    modes: int = Field(16, ge=1)
    grid_size: int = Field(65, ge=1)
    variances: Optional[list[float]] = None

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "torus" and self.s is None:
            raise ValueError("torus basis needs the fractional order 's'")
        if self.kind == "euclidean" and self.variances is None:
            raise ValueError("euclidean basis needs 'variances'")
        return self


class GrowthConfig(_Strict):
    c1: float
    c2: float
    c3: float
    alpha: float


class TargetConfig(_Strict):
    potential: str = "zero"
    params: dict = Field(default_factory=dict)
    lebesgue_reference: bool = False
    growth: Optional[GrowthConfig] = None


class FamilyConfig(_Strict):
    kind: Literal["full", "constant", "multiplication", "finite_rank"] = "multiplication"
    rank: Optional[int] = None


class InitConfig(_Strict):
    """Starting point; ``shift_value`` means beta, a constant potential, ``value*I`` or ``C0^-1 + value*I``."""

    mean: Optional[list[float]] = None
    shift_value: float = 0.0
    shift_data: Optional[list] = None


class RegularizationConfig(_Strict):
    delta: float = Field(0.0, ge=0)
    r: float = Field(1.0, ge=0)


class SolverConfig(_Strict):
    max_iterations: int = Field(5000, ge=0)
    gradient_tolerance: float = Field(1e-6, gt=0)
    initial_step: float = Field(1.0, gt=0)
    shrink: float = Field(0.5, gt=0, lt=1)
    sufficient_decrease: float = Field(1e-4, gt=0, lt=1)
    boundary_margin: float = Field(1e-8, gt=0)
    fix_mean: bool = False
    fix_shift: bool = False
    method: Literal["quadrature", "monte_carlo"] = "quadrature"
    quadrature_order: int = Field(20, ge=2)
    mc_samples: int = Field(10_000, ge=1)


class DoubleWellConfig(_Strict):
    eps_grid: str = "0.02:0.2:0.002"


class MixtureConfig(_Strict):
    n_components: int = Field(2, ge=1)
    weights: Optional[list[float]] = None
    means: Optional[list[list[float]]] = None
    shift_values: Optional[list[float]] = None
    max_iterations: int = Field(300, ge=0)
    gradient_tolerance: float = Field(1e-6, gt=0)
    samples: int = Field(20_000, ge=100)
    final_samples: int = Field(1_000_000, ge=100)


class EndpointConfig(_Strict):
    mean: Optional[list[float]] = None
    shift_value: float = 0.0
    shift_data: Optional[list] = None


class InterpolateConfig(_Strict):
    endpoints: list[EndpointConfig] = Field(default_factory=lambda: [EndpointConfig(), EndpointConfig(shift_value=1.0)])
    t_grid: list[float] = Field(default_factory=lambda: [0.1 * k for k in range(1, 10)])
    kappa: Optional[float] = None

    @field_validator("endpoints")
    @classmethod
    def _two(cls, v):
        if len(v) != 2:
            raise ValueError("exactly two endpoints are required")
        return v


class SequenceConfig(_Strict):
    family: Literal["mollifier", "oscillation"] = "mollifier"
    n_list: list[int] = Field(default_factory=lambda: [8, 16, 32, 64])
    delta: float = Field(1e-2, ge=0)
    r: float = Field(1.0, ge=0)


class DiagnoseConfig(_Strict):
    log_normalizer_samples: int = Field(100_000, ge=2)
    equivalence_samples: int = Field(20_000, ge=2)


class RunConfig(_Strict):
    scenario: Literal["double_well", "approximate", "mixture", "interpolate", "diagnose", "sequence_study"]
    seed: int = 0
    basis: BasisConfig = Field(default_factory=lambda: BasisConfig(kind="bridge"))
    target: TargetConfig = Field(default_factory=TargetConfig)
    family: FamilyConfig = Field(default_factory=FamilyConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    starts: list[InitConfig] = Field(default_factory=list)
    regularization: RegularizationConfig = Field(default_factory=RegularizationConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    double_well: DoubleWellConfig = Field(default_factory=DoubleWellConfig)
    mixture: MixtureConfig = Field(default_factory=MixtureConfig)
    interpolate: InterpolateConfig = Field(default_factory=InterpolateConfig)
    sequence_study: SequenceConfig = Field(default_factory=SequenceConfig)
    diagnose: DiagnoseConfig = Field(default_factory=DiagnoseConfig)


# --------------------------------------------------------------------------
# overrides
# --------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    for item in overrides or ():
        if "=" not in item:
            raise InvalidArgumentError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidArgumentError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(value)
    return raw


def parse_eps_grid(text: str) -> np.ndarray:
    """``start:stop:step`` with ``stop`` included when it lies on the grid."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise InvalidArgumentError(f"eps grid must be start:stop:step, got {text!r}") from None
    if not (start > 0 and step > 0 and stop >= start):
        raise InvalidArgumentError(f"eps grid needs 0 < start <= stop and step > 0, got {text!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def build_basis(cfg: BasisConfig):
    if cfg.kind == "bridge":
        return make_brownian_bridge_basis(cfg.length, cfg.modes, cfg.grid_size)
    if cfg.kind == "torus":
        return make_torus_fractional_basis(cfg.length, cfg.s, cfg.modes, cfg.grid_size)
    return make_euclidean_basis(cfg.variances)


def build_target(cfg: RunConfig, basis):
    t = cfg.target
    pot = make_potential(t.potential, **t.params)
    growth = Growth(**t.growth.model_dump()) if t.growth else None
    return make_target(basis, pot, growth, t.lebesgue_reference)


def build_family(cfg: FamilyConfig, basis) -> PrecisionShift:
    return PrecisionShift.zero(cfg.kind, basis, cfg.rank)


def build_shift(family: PrecisionShift, basis, value: float, data=None) -> PrecisionShift:
    """Shift of the family's variant from a scalar or explicit data; checked for admissibility."""
    if data is not None:
        shift = PrecisionShift(family.variant, data)
    elif family.variant == "constant":
        shift = PrecisionShift.constant(value)
    elif family.variant == "multiplication":
        shift = PrecisionShift.multiplication(np.full(basis.grid_size, value))
    elif family.variant == "full":
        shift = PrecisionShift.full(value * np.eye(basis.mode_count))
    else:
        k = family.rank
        shift = PrecisionShift.finite_rank(np.diag(1.0 / basis.eigenvalues[:k]) + value * np.eye(k))
    shift.check_compatible(basis)
    margin = positivity_margin(shift, basis)
    if not margin > 0:
        lo = -1.0 / basis.eigenvalues[0]
        hint = ""
        if family.variant in ("constant", "multiplication") and data is None:
            hint = f"; admissible interval is ({lo:.6f}, inf)"
        raise NotPositiveError(f"initial shift value {value} is not admissible (margin {margin:.6g}){hint}")
    return shift


def build_mean(mean, basis) -> np.ndarray:
    if mean is None:
        return np.zeros(basis.mode_count)
    m = np.asarray(mean, dtype=float)
    if m.shape != (basis.mode_count,):
        raise InvalidArgumentError(f"mean has {m.size} entries, basis has {basis.mode_count} modes")
    return m


def build_method(cfg: SolverConfig, seed: int):
    if cfg.method == "quadrature":
        return Quadrature(cfg.quadrature_order)
    return MonteCarlo(cfg.mc_samples, seed)


def build_solve_options(cfg: RunConfig) -> SolveOptions:
    s = cfg.solver
    return SolveOptions(
        max_iterations=s.max_iterations,
        gradient_tolerance=s.gradient_tolerance,
        step_rule=StepRule(s.initial_step, s.shrink, s.sufficient_decrease),
        boundary_margin=s.boundary_margin,
        seed=cfg.seed,
        fix_mean=s.fix_mean,
        fix_shift=s.fix_shift,
        method=build_method(s, cfg.seed),
    )


def build_mixture_options(cfg: RunConfig) -> MixtureOptions:
    m = cfg.mixture
    return MixtureOptions(
        max_iterations=m.max_iterations,
        gradient_tolerance=m.gradient_tolerance,
        n=m.samples,
        seed=cfg.seed,
        final_n=m.final_samples,
        final_seed=cfg.seed + 1,
        boundary_margin=cfg.solver.boundary_margin,
    )


def build_regularization(cfg: RunConfig) -> RegularizationSpec:
    return RegularizationSpec(cfg.regularization.delta, cfg.regularization.r)
