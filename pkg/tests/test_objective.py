import numpy as np
import pytest

from klgauss.errors import InvalidArgumentError, NotPositiveError, UnsupportedMethodError
from klgauss.measures import GaussianMeasure, kl_gaussian
from klgauss.objective import (
    GridFunctional,
    Growth,
    MonteCarlo,
    Quadrature,
    RegularizationSpec,
    constant_potential,
    double_well_potential,
    double_well_target,
    evaluate,
    expectation_phi,
    gradient,
    kl_objective,
    make_potential,
    make_target,
    quadratic_potential,
    quartic_potential,
    zero_potential,
)
from klgauss.parameterization import PrecisionShift, assemble_covariance
from klgauss.spectral import make_euclidean_basis

from conftest import central_difference, gradient_relative_error, random_admissible_point
import oracles


def point_measure(m, var):
    return GaussianMeasure.from_covariance(make_euclidean_basis([1.0]), [m], [[var]])


def dw_closed_form(m, var, eps):
    return (0.25 * (m**2 - 1) ** 2 + var / 2 * (3 * m**2 - 1) + 0.75 * var**2) / eps


class TestPotentials:
    def test_registry(self):
        p = make_potential("double_well", epsilon=0.1)
        assert p.phi(np.array([1.0]))[0] == 0.0
        assert p.min_curvature == pytest.approx(-10.0)

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            make_potential("sextic")

    def test_bad_params(self):
        with pytest.raises(InvalidArgumentError):
            make_potential("quadratic", p=1.0)

    @pytest.mark.parametrize("pot", [double_well_potential(0.3), quartic_potential(1.0, -0.5), quadratic_potential(2.0)])
    def test_derivatives(self, pot):
        x = np.linspace(-2, 2, 11)
        h = 1e-6
        np.testing.assert_allclose(pot.dphi(x), (pot.phi(x + h) - pot.phi(x - h)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(pot.d2phi(x), (pot.dphi(x + h) - pot.dphi(x - h)) / (2 * h), atol=1e-6)

    def test_growth_bound_enforced(self, bridge8):
        target = make_target(bridge8, quartic_potential(1.0, 0.0), growth=Growth(1.0, 1.0, 0.1, 1.0))
        with pytest.raises(InvalidArgumentError):
            target.evaluate(np.full((1, 8), 5.0))

    def test_growth_exponent_range(self):
        with pytest.raises(InvalidArgumentError):
            Growth(1.0, 1.0, 1.0, 2.0)


class TestExpectation:
    def test_second_moment(self):
        target = make_target(make_euclidean_basis([1.0]), quadratic_potential(2.0))
        assert expectation_phi(point_measure(0.7, 0.3), target) == pytest.approx(0.49 + 0.3, rel=1e-14)

    @pytest.mark.parametrize("order", [3, 5, 20])
    def test_fourth_moment(self, order):
        target = make_target(make_euclidean_basis([1.0]), quartic_potential(4.0, 0.0))
        assert expectation_phi(point_measure(0.0, 0.5), target, Quadrature(order)) == pytest.approx(3 * 0.25, rel=1e-13)

    def test_double_well_closed_form(self, rng):
        for _ in range(10):
            m, var, eps = rng.normal(), rng.uniform(0.01, 2), rng.uniform(0.02, 1)
            target = make_target(make_euclidean_basis([1.0]), double_well_potential(eps))
            assert expectation_phi(point_measure(m, var), target) == pytest.approx(dw_closed_form(m, var, eps), rel=1e-12)

    def test_hermite_exactness(self, bridge8, rng):
        target = make_target(bridge8, quartic_potential(0.7, -0.3))
        mean, shift = random_admissible_point(rng, "full", bridge8)
        nu = assemble_covariance(shift, mean, bridge8)
        a = expectation_phi(nu, target, Quadrature(3))
        b = expectation_phi(nu, target, Quadrature(6))
        assert a == pytest.approx(b, abs=1e-12)

    def test_monte_carlo_agrees(self, bridge8, rng):
        target = make_target(bridge8, double_well_potential(0.5))
        mean, shift = random_admissible_point(rng, "constant", bridge8)
        nu = assemble_covariance(shift, mean, bridge8)
        n = 40_000
        x = nu.mean + np.random.default_rng(1).standard_normal((n, 8)) @ nu.covariance_factor.T
        vals = target.evaluate(x)
        q = expectation_phi(nu, target)
        assert abs(q - vals.mean()) <= 3 * vals.std() / np.sqrt(n)
        mc = expectation_phi(nu, target, MonteCarlo(n, 3))
        assert abs(q - mc) <= 3 * vals.std() / np.sqrt(n)

    def test_quadrature_rejects_functional(self, bridge8):
        target = make_target(bridge8, GridFunctional(lambda xg: np.sum(xg**2, axis=-1)))
        with pytest.raises(UnsupportedMethodError):
            expectation_phi(GaussianMeasure.reference(bridge8), target, Quadrature())

    def test_functional_monte_carlo(self, bridge8):
        w = bridge8.quadrature_weights
        target = make_target(bridge8, GridFunctional(lambda xg: 0.5 * xg**2 @ w))
        sep = make_target(bridge8, quadratic_potential(1.0))
        nu = GaussianMeasure.reference(bridge8)
        mc = MonteCarlo(5000, 9)
        assert expectation_phi(nu, target, mc) == pytest.approx(expectation_phi(nu, sep, mc), rel=1e-12)


class TestObjective:
    def test_reference_is_zero(self, bridge8):
        target = make_target(bridge8, zero_potential())
        val = kl_objective(np.zeros(8), PrecisionShift.constant(0.0), target)
        assert val.total == 0.0

    def test_reduces_to_gaussian_kl(self, bridge8, rng):
        target = make_target(bridge8, zero_potential())
        mean, shift = random_admissible_point(rng, "full", bridge8)
        val = kl_objective(mean, shift, target)
        nu = assemble_covariance(shift, mean, bridge8)
        assert val.total == pytest.approx(kl_gaussian(nu, GaussianMeasure.reference(bridge8)), rel=1e-12)

    def test_decomposition(self, bridge8, rng):
        target = make_target(bridge8, double_well_potential(0.3))
        mean, shift = random_admissible_point(rng, "multiplication", bridge8)
        v = kl_objective(mean, shift, target, RegularizationSpec(0.2, 1.0))
        assert v.total == pytest.approx(v.gaussian_kl + v.phi_expectation + v.penalty, abs=1e-12)
        assert v.gaussian_kl >= 0

    def test_penalty_value(self, bridge16):
        target = make_target(bridge16, zero_potential())
        shift = PrecisionShift.multiplication(bridge16.eigenfunction_table[0])
        v = kl_objective(None, shift, target, RegularizationSpec(0.1, 1.0))
        assert v.penalty == pytest.approx(0.1 * oracles.SOBOLEV_E1_R1, rel=1e-12)
        assert v.penalty == pytest.approx(0.346740, abs=1e-6)

    def test_penalty_only_for_multiplication(self, bridge8):
        target = make_target(bridge8, zero_potential())
        assert kl_objective(None, PrecisionShift.constant(1.0), target, RegularizationSpec(1.0, 1.0)).penalty == 0.0

    def test_constant_shift_of_phi(self, bridge8, rng):
        base = make_target(bridge8, double_well_potential(0.4))
        shifted = make_target(bridge8, double_well_potential(0.4) + constant_potential(1.75))
        mean, shift = random_admissible_point(rng, "full", bridge8)
        diff = kl_objective(mean, shift, shifted).total - kl_objective(mean, shift, base).total
        assert diff == pytest.approx(1.75 * bridge8.quadrature_weights.sum(), abs=1e-10)

    def test_convex_along_mean_segments(self, bridge8, rng):
        target = make_target(bridge8, quartic_potential(1.0, 0.5))
        _, shift = random_admissible_point(rng, "constant", bridge8)
        m1, m2 = rng.standard_normal(8), rng.standard_normal(8)
        s = np.linspace(0, 1, 41)
        f = np.array([kl_objective((1 - t) * m1 + t * m2, shift, target).total for t in s])
        assert np.all(f[:-2] - 2 * f[1:-1] + f[2:] >= -1e-8)

    def test_refuses_near_boundary(self, bridge8):
        target = make_target(bridge8, zero_potential())
        with pytest.raises(NotPositiveError):
            kl_objective(None, PrecisionShift.constant(-oracles.PI2_OVER_4 + 1e-12), target)

    def test_lebesgue_reference_needs_euclidean(self, bridge8):
        with pytest.raises(InvalidArgumentError):
            make_target(bridge8, zero_potential(), lebesgue_reference=True)

    def test_one_dimensional_double_well(self):
        # with a Lebesgue reference the objective is E[phi] - log(sigma) - 1/2
        target = double_well_target(0.05)
        for m, var in [(0.3, 0.2), (-1.1, 0.05), (0.0, 1.7)]:
            v = kl_objective([m], PrecisionShift.constant(1 / var - 1), target)
            assert v.total == pytest.approx(dw_closed_form(m, var, 0.05) - 0.5 * np.log(var) - 0.5, rel=1e-12)


class TestGradient:
    def test_reference_gradient(self, bridge8, rng):
        target = make_target(bridge8, zero_potential())
        m = rng.standard_normal(8)
        gm, gs = gradient(m, PrecisionShift.constant(0.0), target)
        np.testing.assert_allclose(gm, m / bridge8.eigenvalues, rtol=1e-12)
        gm0, gs0 = gradient(np.zeros(8), PrecisionShift.full(np.zeros((8, 8))), target)
        assert np.max(np.abs(gm0)) == 0.0
        assert np.max(np.abs(gs0)) <= 1e-12

    @pytest.mark.parametrize("family", ["full", "constant", "multiplication", "finite_rank"])
    def test_finite_differences(self, family, bridge8, rng):
        target = make_target(bridge8, double_well_potential(0.4))
        reg = RegularizationSpec(0.05, 1.0)
        for _ in range(3):
            mean, shift = random_admissible_point(rng, family, bridge8)
            gm, gs = gradient(mean, shift, target, reg)
            fm = central_difference(lambda x: kl_objective(x, shift, target, reg).total, mean)
            fs = central_difference(lambda th: kl_objective(mean, shift.with_parameters(th), target, reg).total, shift.parameters())
            assert gradient_relative_error(gm, fm) <= 1e-5
            assert gradient_relative_error(gs, fs) <= 1e-5

    @pytest.mark.parametrize("family", ["full", "multiplication"])
    def test_monte_carlo_finite_differences(self, family, bridge8, rng):
        target = make_target(bridge8, double_well_potential(0.4))
        mc = MonteCarlo(2000, 5)
        mean, shift = random_admissible_point(rng, family, bridge8)
        gm, gs = gradient(mean, shift, target, None, mc)
        fm = central_difference(lambda x: kl_objective(x, shift, target, None, mc).total, mean)
        fs = central_difference(lambda th: kl_objective(mean, shift.with_parameters(th), target, None, mc).total, shift.parameters())
        assert gradient_relative_error(gm, fm) <= 1e-5
        assert gradient_relative_error(gs, fs) <= 1e-5

    def test_stationary_at_closed_form_point(self):
        target = double_well_target(oracles.DW_EPS)
        shift = PrecisionShift.constant(1 / oracles.DW_SIGMA**2 - 1)
        for m in (oracles.DW_M, -oracles.DW_M):
            gm, gs = gradient([m], shift, target)
            assert np.hypot(gm[0], gs[0]) <= 1e-8

    def test_evaluate_without_gradient(self, bridge8):
        target = make_target(bridge8, zero_potential())
        v, gm, gs = evaluate(None, PrecisionShift.constant(0.5), target, need_grad=False)
        assert gm is None and gs is None and v.total > 0
