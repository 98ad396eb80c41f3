import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ldprobust.models import (
    Beta,
    ContaminatedSource,
    Discrete,
    DivergentMomentError,
    Gaussian,
    Laplace,
    SobolevTrig,
    Uniform,
    UnsupportedPairError,
    absolute_risk,
    bernoulli,
    central_moment,
    distribution_from_dict,
    point_mass,
    sample_contaminated,
    scheffe_set,
    two_point_heavy,
)
from ldprobust.rngkit import InvalidParameterError, StreamKey, derive_stream


def _stream(*path):
    return derive_stream(StreamKey(123, path))


# --- contamination ----------------------------------------------------------


def test_eps_zero_draws_only_inliers():
    xs = sample_contaminated(ContaminatedSource(point_mass(0.0), point_mass(1.0), 0.0), 1000, _stream(1))
    assert np.all(xs == 0.0)


def test_eps_one_draws_only_contaminant():
    xs = sample_contaminated(ContaminatedSource(point_mass(0.0), point_mass(1.0), 1.0), 1000, _stream(2))
    assert np.all(xs == 1.0)


def test_contamination_fraction():
    xs = sample_contaminated(ContaminatedSource(point_mass(0.0), point_mass(1.0), 0.3), 10**5, _stream(3))
    assert abs(xs.mean() - 0.3) < 0.01


def test_eps_zero_ecdf_within_dkw_band():
    n = 10**5
    xs = np.sort(sample_contaminated(ContaminatedSource(Gaussian(0.5, 2.0)), n, _stream(4)))
    band = math.sqrt(math.log(2 / 0.001) / (2 * n))
    cdf = stats.norm.cdf(xs, 0.5, 2.0)
    upper = np.arange(1, n + 1) / n
    assert max(np.max(upper - cdf), np.max(cdf - (upper - 1 / n))) < band


def test_contaminated_source_validates():
    with pytest.raises(InvalidParameterError):
        ContaminatedSource(point_mass(0.0), point_mass(1.0), 1.5)
    with pytest.raises(InvalidParameterError):
        ContaminatedSource(point_mass(0.0), None, 0.1)
    with pytest.raises(InvalidParameterError):
        sample_contaminated(ContaminatedSource(point_mass(0.0)), 0, _stream(5))


# --- Scheffe sets -----------------------------------------------------------


def _brute_force_tv(P0: Discrete, P1: Discrete) -> float:
    support = sorted({v for v, _ in P0.atoms} | {v for v, _ in P1.atoms})
    best = 0.0
    for r in range(len(support) + 1):
        for S in itertools.combinations(support, r):
            best = max(best, sum(P0.pmf(v) - P1.pmf(v) for v in S))
    return best


def test_scheffe_bernoulli_pair():
    A = scheffe_set(bernoulli(0.2), bernoulli(0.8))
    assert A.atoms == (0.0,)
    assert A.tv == pytest.approx(0.6, abs=1e-15)
    assert A.tv == pytest.approx(_brute_force_tv(bernoulli(0.2), bernoulli(0.8)), abs=1e-15)


def test_scheffe_identical_is_empty():
    P = Discrete(((0.0, 0.25), (1.0, 0.75)))
    A = scheffe_set(P, P)
    assert A.atoms == ()
    assert A.tv == 0.0


def test_scheffe_uniform_vs_linear_density():
    A = scheffe_set(Uniform(0.0, 1.0), Beta(2.0, 1.0))
    grid = (np.arange(A.mask.size) + 0.5) / A.mask.size
    assert np.array_equal(A.mask, grid < 0.5)
    assert A.tv == pytest.approx(0.25, abs=1e-6)


def test_scheffe_mixed_pair_unsupported():
    with pytest.raises(UnsupportedPairError):
        scheffe_set(bernoulli(0.3), Uniform(0.0, 1.0))


def test_scheffe_contains_grid_cells():
    A = scheffe_set(Uniform(0.0, 1.0), Beta(2.0, 1.0))
    assert A.contains([0.1, 0.49, 0.51, 1.0, 1.5, -0.1]).tolist() == [True, True, False, False, False, False]


@st.composite
def discrete_pairs(draw):
    m = draw(st.integers(1, 12))
    w0 = np.array(draw(st.lists(st.integers(0, 20), min_size=m, max_size=m)), dtype=float)
    w1 = np.array(draw(st.lists(st.integers(0, 20), min_size=m, max_size=m)), dtype=float)
    w0[0] += 1
    w1[-1] += 1
    vals = [float(v) for v in range(m)]
    return (
        Discrete(tuple(zip(vals, w0 / w0.sum()))),
        Discrete(tuple(zip(vals, w1 / w1.sum()))),
    )


@settings(max_examples=60, deadline=None)
@given(discrete_pairs())
def test_scheffe_matches_subset_enumeration(pair):
    P0, P1 = pair
    A = scheffe_set(P0, P1)
    assert A.tv == pytest.approx(_brute_force_tv(P0, P1), abs=1e-12)
    assert A.tv >= 0
    assert A.p0_mass - A.p1_mass == A.tv


# --- moments and risks ------------------------------------------------------


@pytest.mark.parametrize("k", [1.0, 2.0, 3.5])
def test_point_mass_moment_zero(k):
    assert central_moment(point_mass(4.0), k) == 0.0


def test_gaussian_variance():
    assert central_moment(Gaussian(3.0, 1.0), 2) == pytest.approx(1.0, abs=1e-12)


def test_two_point_heavy_moment():
    d = two_point_heavy(5.0, 0.1, 2.0)
    # 0.5 (1 - eta) eta^(k-1) + 0.5 (1 - eta)^k
    assert central_moment(d, 2.0) == pytest.approx(0.45, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(min_value=-20, max_value=20),
    st.floats(min_value=0.01, max_value=0.99),
    st.floats(min_value=1.1, max_value=6.0),
)
def test_two_point_heavy_in_moment_class(D, eta, k):
    d = two_point_heavy(abs(D) + 1.0, eta, k)
    assert -abs(D) - 1.0 <= d.mean() <= abs(D) + 1.0
    assert d.central_moment(k) <= 1.0 + 1e-12


def test_infinite_moment_order_diverges():
    with pytest.raises(DivergentMomentError):
        central_moment(Gaussian(), math.inf)


def test_uniform_and_beta_moments_by_quadrature():
    assert central_moment(Uniform(0.0, 1.0), 2) == pytest.approx(1 / 12, rel=1e-10)
    a, b = 2.0, 3.0
    var = a * b / ((a + b) ** 2 * (a + b + 1))
    assert central_moment(Beta(a, b), 2) == pytest.approx(var, rel=1e-8)


def test_absolute_risk_point_and_laplace():
    assert absolute_risk(point_mass(2.5), 2.5) == 0.0
    assert absolute_risk(Laplace(0.0, 1.0), 0.0) == pytest.approx(1.0, rel=1e-12)


def test_absolute_risk_laplace_against_monte_carlo():
    x = Laplace(0.0, 1.0).sample(10**7, _stream(6))
    d = np.abs(x - 1.0)
    se = d.std() / math.sqrt(d.size)
    got = absolute_risk(Laplace(0.0, 1.0), 1.0)
    assert abs(got - d.mean()) < 3 * se
    assert got == pytest.approx(1 + math.exp(-1), rel=1e-12)


@pytest.mark.parametrize("t", [-1.3, 0.0, 0.4, 2.0])
def test_gaussian_absolute_risk_matches_quadrature(t):
    from scipy import integrate

    g = Gaussian(0.3, 1.7)
    want = integrate.quad(lambda x: abs(x - t) * stats.norm.pdf(x, 0.3, 1.7), -np.inf, np.inf, points=None)[0]
    assert absolute_risk(g, t) == pytest.approx(want, rel=1e-8)


def test_sobolev_trig_density_integrates_to_one():
    d = SobolevTrig((1.0, 0.3, 0.2, 0.1, -0.1, 0.05), 1.0, 1.5)
    grid = (np.arange(2**14) + 0.5) / 2**14
    assert abs(d.pdf(grid).mean() - 1.0) <= 1e-6
    assert d.pdf(grid).min() >= 0


def test_sobolev_trig_checks_ellipsoid_and_theta1():
    with pytest.raises(InvalidParameterError):
        SobolevTrig((1.0, 0.5, 0.5), 1.0, 1.1)
    with pytest.raises(InvalidParameterError):
        SobolevTrig((0.9, 0.1))


def test_sobolev_trig_sampler_matches_cdf():
    d = SobolevTrig((1.0, 0.3, 0.2, 0.1, -0.1, 0.05), 1.0, 1.5)
    xs = d.sample(20000, _stream(7))
    from scipy import integrate

    res = stats.kstest(xs, lambda t: np.array([integrate.quad(d.pdf, 0, v)[0] for v in np.atleast_1d(t)]))
    assert res.pvalue > 1e-3


def test_random_sobolev_respects_constraints():
    d = SobolevTrig.random(1.0, 1.5, 6, _stream(8))
    assert d.ellipsoid_norm(1.0) <= 1.5**2 + 1e-12
    assert d.coefs[0] == 1.0


@pytest.mark.parametrize(
    "spec",
    [
        {"kind": "gaussian", "mu": 1.0, "sigma": 2.0},
        {"kind": "laplace", "mu": 0.3, "b": 1.0},
        {"kind": "uniform", "a": 0.0, "b": 1.0},
        {"kind": "point_mass", "v": 3.0},
        {"kind": "bernoulli", "p": 0.25},
        {"kind": "two_point_heavy", "D": 5, "eta": 0.1, "k": 2},
        {"kind": "sobolev_trig", "coefs": [1, 0.2], "beta": 1, "radius": 1.5},
    ],
)
def test_distribution_round_trip(spec):
    d = distribution_from_dict(spec)
    assert distribution_from_dict(d.to_dict()) == d


def test_distribution_from_dict_errors():
    with pytest.raises(InvalidParameterError):
        distribution_from_dict({"kind": "cauchy"})
    with pytest.raises(InvalidParameterError):
        distribution_from_dict({"kind": "point_mass"})
