import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from klgauss.spectral import make_brownian_bridge_basis, make_euclidean_basis, make_torus_fractional_basis


@pytest.fixture(scope="session")
def bridge8():
    return make_brownian_bridge_basis(2.0, 8, 33)


@pytest.fixture(scope="session")
def bridge16():
    return make_brownian_bridge_basis(2.0, 16, 65)


@pytest.fixture(scope="session")
def torus6():
    return make_torus_fractional_basis(2 * np.pi, 1.5, 6, 64)


@pytest.fixture(scope="session")
def line():
    return make_euclidean_basis([1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_spd(rng, n, scale=1.0, floor=0.2):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + floor * np.eye(n))


def central_difference(f, x, rel_step=1e-5):
    """Central differences with steps ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradient_relative_error(analytic, fd):
    return float(np.max(np.abs(analytic - fd)) / max(1.0, np.max(np.abs(fd))))


def random_admissible_point(rng, family, basis, scale=0.3):
    """Random mean and shift of ``family`` with a comfortable positivity margin."""
    from klgauss.parameterization import PrecisionShift, positivity_margin

    g = basis.mode_count
    lam = basis.eigenvalues
    mean = rng.standard_normal(g) * np.sqrt(lam)
    while True:
        if family == "constant":
            shift = PrecisionShift.constant(rng.uniform(-1.5, 3.0))
        elif family == "multiplication":
            t = basis.grid
            v = rng.uniform(-1, 2) + sum(rng.normal(0, 1) * np.cos((k + 1) * t) / (k + 1) for k in range(3))
            shift = PrecisionShift.multiplication(v)
        elif family == "full":
            A = rng.standard_normal((g, g)) * scale
            shift = PrecisionShift.full((A + A.T) / 2)
        else:
            r = min(3, g)
            A = rng.standard_normal((r, r)) * scale
            shift = PrecisionShift.finite_rank(np.diag(1 / lam[:r]) + (A + A.T) / 2)
        if positivity_margin(shift, basis) > 0.2:
            return mean, shift
