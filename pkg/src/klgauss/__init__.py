"""Gaussian approximation of measures by minimising the Kullback-Leibler divergence."""

from .divergences import (
    DiscreteDist,
    dv_lower_bound,
    hellinger_discrete,
    kl_discrete,
    optimal_dv_theta,
    parallelogram_residual,
    parallelogram_terms,
    tv_discrete,
)
from .errors import (
    InfiniteDivergenceError,
    InvalidArgumentError,
    KLGaussError,
    NotPositiveError,
    NotTraceClassError,
    ResolutionError,
    UnsupportedMethodError,
)
from .interpolation import (
    DisplacementPath,
    convexity_check,
    displacement_map,
    interpolate,
    kappa_for_target,
    kappa_from_curvature,
    transport_cost_h1,
)
from .measures import (
    GaussianMeasure,
    MixtureMeasure,
    hellinger_distance,
    hellinger_gaussian,
    kl_gaussian,
    kl_mixture_mc,
    log_normalizer_mc,
    mixture_log_density_ratio,
    sample,
    tv_bounds,
)
from .objective import (
    GridFunctional,
    MonteCarlo,
    ObjectiveValue,
    Quadrature,
    RegularizationSpec,
    TargetSpec,
    double_well_target,
    expectation_phi,
    gradient,
    kl_objective,
    make_potential,
    make_target,
)
from .optimize import (
    MixtureOptions,
    SolveOptions,
    Solution,
    StepRule,
    convergence_certificate,
    minimize,
    minimize_mixture,
    multistart,
)
from .parameterization import (
    PrecisionShift,
    assemble_covariance,
    assemble_precision,
    feldman_hajek_report,
    positivity_margin,
    precision_equivalence_check,
    weighted_hs_norm,
)
from .scenarios import (
    SequenceFamily,
    bifurcation_sweep,
    double_well_critical_points,
    double_well_objective,
    find_crossover,
    make_sequence_potential,
    sequence_study,
)
from .spectral import (
    SpectralBasis,
    cameron_martin_norm_sq,
    make_brownian_bridge_basis,
    make_euclidean_basis,
    make_torus_fractional_basis,
    project,
    sobolev_norm_sq,
)

__version__ = "0.1.0"
