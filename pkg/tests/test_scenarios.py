import math

import numpy as np
import pytest

from klgauss.errors import InvalidArgumentError, ResolutionError
from klgauss.objective import Quadrature, RegularizationSpec, double_well_target, expectation_phi, make_target
from klgauss.measures import GaussianMeasure
from klgauss.objective import double_well_potential
from klgauss.optimize import SolveOptions, multistart
from klgauss.parameterization import PrecisionShift
from klgauss.scenarios import (
    BIFURCATION_COLUMNS,
    FOLD_EPSILON,
    SequenceFamily,
    bifurcation_sweep,
    classify,
    critical_point_counts,
    crossover_gap,
    double_well_critical_points,
    double_well_gradient,
    double_well_objective,
    find_crossover,
    limit_potential,
    make_sequence_potential,
    max_resolved_index,
    mollifier_l2_sq,
    mollifier_profile,
    oscillation_profile,
    regularized_optimum,
    sequence_study,
)
from klgauss.spectral import make_brownian_bridge_basis, make_euclidean_basis, sobolev_norm_sq

import oracles


@pytest.fixture(scope="module")
def fine_bridge():
    return make_brownian_bridge_basis(2.0, 32, 513)


class TestDoubleWellObjective:
    def test_unit_point(self):
        # 1/4 (m^2-1)^2 + sigma^2/2 (3m^2-1) + 3/4 sigma^4 at (0, 1, 1) is 1/4 - 1/2 + 3/4
        assert double_well_objective(0.0, 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_entropy_blow_up(self):
        assert double_well_objective(1.0, 1e-300, 0.1) > 600

    @pytest.mark.parametrize("args", [(0.0, 0.0, 0.1), (0.0, 1.0, 0.0), (0.0, -1.0, 0.1)])
    def test_invalid(self, args):
        with pytest.raises(InvalidArgumentError):
            double_well_objective(*args)

    def test_matches_objective_quadrature(self, rng):
        basis = make_euclidean_basis([1.0])
        for _ in range(20):
            m, s, e = rng.normal(), rng.uniform(0.05, 2), rng.uniform(0.02, 1)
            nu = GaussianMeasure.from_covariance(basis, [m], [[s * s]])
            ephi = expectation_phi(nu, make_target(basis, double_well_potential(e)), Quadrature())
            assert double_well_objective(m, s, e) == pytest.approx(ephi - math.log(s), abs=1e-10)

    def test_closed_form_values(self):
        assert double_well_objective(oracles.DW_M, oracles.DW_SIGMA, 0.05) == pytest.approx(oracles.DW_D_OFF, rel=1e-13)
        assert double_well_objective(0.0, oracles.DW_SIGMA0, 0.05) == pytest.approx(oracles.DW_D_SYM, rel=1e-13)


class TestCriticalPoints:
    def test_eps_005(self):
        cp = double_well_critical_points(0.05)
        assert cp.symmetric.sigma == pytest.approx(oracles.DW_SIGMA0, rel=1e-14)
        lower = sorted((p for p in cp.off_center if p.branch_id.startswith("lower")), key=lambda p: p.m)
        assert [p.m for p in lower] == pytest.approx([-oracles.DW_M, oracles.DW_M], rel=1e-14)
        assert all(p.sigma == pytest.approx(oracles.DW_SIGMA, rel=1e-14) for p in lower)
        assert cp.count == 5

    def test_fold(self):
        cp = double_well_critical_points(FOLD_EPSILON)
        assert cp.count == 3
        for p in cp.off_center:
            assert p.sigma**2 == pytest.approx(1 / 6, rel=1e-12)
            assert p.m**2 == pytest.approx(0.5, rel=1e-12)

    def test_beyond_fold(self):
        assert double_well_critical_points(0.2).off_center == ()

    def test_fold_straddle(self):
        assert len(double_well_critical_points(FOLD_EPSILON - 1e-4).off_center) > 0
        assert len(double_well_critical_points(FOLD_EPSILON + 1e-4).off_center) == 0

    def test_gradient_residuals_on_log_grid(self):
        for e in np.logspace(-3, 0, 60):
            for p in double_well_critical_points(e).all:
                assert np.linalg.norm(double_well_gradient(p.m, p.sigma, e)) <= 1e-10

    def test_classification(self):
        kinds = {p.branch_id: classify(p.m, p.sigma, 0.05) for p in double_well_critical_points(0.05).all}
        assert kinds == {"symmetric": "minimum", "lower+": "minimum", "lower-": "minimum", "upper+": "saddle", "upper-": "saddle"}
        assert classify(0.0, double_well_critical_points(0.2).symmetric.sigma, 0.2) == "minimum"

    def test_classification_stable(self):
        for e in (0.05, 0.1, 0.15, 0.2, 0.5):
            a = [classify(p.m, p.sigma, e) for p in double_well_critical_points(e).all]
            b = [classify(p.m, p.sigma, e + 1e-6) for p in double_well_critical_points(e + 1e-6).all]
            assert a == b

    def test_count_sequence(self):
        # closed-form count: five below the fold, three at it, one beyond
        counts = [double_well_critical_points(e).count for e in (1e-3, 0.05, 0.12, FOLD_EPSILON, 0.17, 1.0)]
        assert counts == [5, 5, 5, 3, 1, 1]


class TestSweepAndCrossover:
    def test_columns(self):
        rows = bifurcation_sweep([0.05])
        assert tuple(rows[0]) == BIFURCATION_COLUMNS

    def test_global_at_005(self):
        rows = bifurcation_sweep([0.05])
        glob = sorted(r["m"] for r in rows if r["is_global"])
        assert glob == pytest.approx([-oracles.DW_M, oracles.DW_M], rel=1e-12)

    def test_global_at_015_is_symmetric(self):
        rows = bifurcation_sweep([0.15])
        glob = [r for r in rows if r["is_global"]]
        assert len(glob) == 1 and glob[0]["m"] == 0.0
        assert len(rows) == 5

    def test_single_minimum_at_02(self):
        rows = bifurcation_sweep([0.2])
        assert len(rows) == 1 and rows[0]["kind"] == "minimum" and rows[0]["is_global"]

    def test_rejects_bad_grid(self):
        with pytest.raises(InvalidArgumentError):
            bifurcation_sweep([0.1, 0.05])

    def test_counts(self):
        rows = bifurcation_sweep(np.linspace(0.02, 0.2, 91))
        c = critical_point_counts(rows)
        assert set(c.values()) <= {1, 3, 5}
        assert all((n == 5) == (e < FOLD_EPSILON) for e, n in c.items())

    def test_crossover(self):
        e = find_crossover()
        assert e == pytest.approx(0.122822, abs=1e-4)
        assert e == pytest.approx(oracles.DW_CROSSOVER, abs=1e-8)

    def test_gap_signs(self):
        assert crossover_gap(0.05) == pytest.approx(oracles.DW_GAP_005, rel=1e-12)
        assert crossover_gap(0.15) == pytest.approx(oracles.DW_GAP_015, rel=1e-12)
        assert crossover_gap(0.122822) == pytest.approx(oracles.DW_GAP_AT_PUBLISHED, rel=1e-6)


class TestOptimizerRecoversBranches:
    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.15])
    def test_every_minimum(self, eps):
        target = double_well_target(eps)
        fam = PrecisionShift.constant(0.0)
        narrow = PrecisionShift.constant(1 / 0.3**2 - 1)
        inits = [([-1.0], narrow), ([0.0], fam), ([1.0], narrow)]
        sols = multistart(target, fam, inits, None, SolveOptions(gradient_tolerance=1e-9))
        found = sorted((s.mean[0], 1 / math.sqrt(1 + s.shift.beta)) for s in sols)
        cp = double_well_critical_points(eps)
        expected = sorted((p.m, p.sigma) for p in cp.all if classify(p.m, p.sigma, eps) == "minimum")
        assert len(found) == len(expected)
        for (m, s), (me, se) in zip(found, expected):
            assert m == pytest.approx(me, abs=1e-6)
            assert s == pytest.approx(se, abs=1e-6)


class TestSequences:
    def test_mollifier_profile_mass(self):
        t = np.linspace(-1, 1, 20001)
        assert np.all(mollifier_profile(t) >= 0)
        assert np.sum(mollifier_profile(t)) * (t[1] - t[0]) == pytest.approx(1.0, abs=1e-8)
        assert mollifier_profile(np.array([1.0, -1.5]))[0] == 0.0

    def test_mollifier_l2(self):
        # mpmath quadrature of the bump and its square, 30 digits
        assert mollifier_l2_sq() == pytest.approx(0.67511681300969752899, rel=1e-12)

    def test_mollifier_unit_mass(self, fine_bridge):
        for n in (1, 8, 64):
            v = make_sequence_potential(SequenceFamily("mollifier", n), fine_bridge)
            assert np.sum(fine_bridge.quadrature_weights * v) == pytest.approx(1.0, abs=1e-6)

    def test_oscillation_mean(self, fine_bridge):
        v = make_sequence_potential(SequenceFamily("oscillation", 4), fine_bridge)
        assert np.sum(fine_bridge.quadrature_weights * v) / 2.0 == pytest.approx(1.0, abs=1e-6)
        t = np.linspace(0, 1, 1001)[:-1]
        assert oscillation_profile(t).mean() == pytest.approx(1.0, abs=1e-12)
        assert np.all(oscillation_profile(t) > 0)

    def test_resolution_error(self, fine_bridge):
        n = max_resolved_index("mollifier", fine_bridge)
        assert n == 128
        make_sequence_potential(SequenceFamily("mollifier", n), fine_bridge)
        with pytest.raises(ResolutionError):
            make_sequence_potential(SequenceFamily("mollifier", n + 1), fine_bridge)

    def test_limit_objects(self, fine_bridge):
        d = limit_potential("mollifier", fine_bridge)
        assert np.sum(fine_bridge.quadrature_weights * d) == pytest.approx(1.0)
        assert np.count_nonzero(d) == 1
        assert np.all(limit_potential("oscillation", fine_bridge) == 1.0)

    def test_bad_family(self):
        with pytest.raises(InvalidArgumentError):
            SequenceFamily("ramp", 3)

    def test_mollifier_study(self, fine_bridge):
        rows = sequence_study("mollifier", [8, 16, 32, 64], basis=fine_bridge)
        kl = [r["kl_to_limit"] for r in rows]
        assert all(a > b for a, b in zip(kl, kl[1:]))
        for r in rows:
            assert r["l2_norm_sq"] / (r["n"] * mollifier_l2_sq()) == pytest.approx(1.0, abs=0.05)
        hs = [r["weighted_hs_norm"] for r in rows]
        assert (max(hs) - min(hs)) / min(hs) < 0.10
        assert rows[-1]["l2_norm_sq"] >= 6 * rows[0]["l2_norm_sq"]
        assert all(r["regularized_converged"] for r in rows)

    def test_oscillation_study(self, fine_bridge):
        n_max = max_resolved_index("oscillation", fine_bridge)
        ns = [2, 4, 8, 16, 32, n_max]
        rows = sequence_study("oscillation", ns, basis=fine_bridge)
        kl = [r["kl_to_limit"] for r in rows]
        assert all(a >= b for a, b in zip(kl, kl[1:]))
        assert kl[-1] <= 1e-3

    def test_regularised_optimum_independent_of_init(self, fine_bridge):
        v = make_sequence_potential(SequenceFamily("mollifier", 32), fine_bridge)
        rng = np.random.default_rng(5)
        norms = []
        for _ in range(5):
            init = rng.uniform(-1, 3) + 0.5 * np.sin(np.pi * (fine_bridge.grid + 1) * rng.integers(1, 5))
            sol = regularized_optimum(v, fine_bridge, RegularizationSpec(1e-2, 1.0), init=init)
            assert sol.converged
            norms.append(math.sqrt(sobolev_norm_sq(sol.shift.data, 1.0, fine_bridge)))
        assert (max(norms) - min(norms)) / np.mean(norms) < 0.10
