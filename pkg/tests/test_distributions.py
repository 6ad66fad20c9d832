import math

import numpy as np
import pytest

from fcfsalis.distributions import (
    Deterministic,
    Exponential,
    Pareto,
    Uniform,
    parse_distribution,
    substreams,
)

N = 10 ** 6


def ks_distance(dist, x):
    x = np.sort(x)
    F = dist.cdf(x)
    n = len(x)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(max(np.max(hi - F), np.max(F - lo)))


CONTINUOUS = [Exponential(0.125), Exponential(0.1), Uniform(2, 6), Uniform(0, 10), Pareto(2, 3), Pareto(3, 3)]


def test_means():
    assert Exponential(0.125).mean() == 8
    assert Pareto(2, 3).mean() == 3
    assert Uniform(2, 6).mean() == 4
    assert Deterministic(0.5).mean() == 0.5


def test_cdf_values():
    assert float(Exponential(0.1).cdf(1.0)) == pytest.approx(0.0952, abs=5e-5)
    assert float(Uniform(0, 10).cdf(1.0)) == pytest.approx(0.1)
    assert float(Pareto(2, 3).cdf(2.0)) == 0.0
    assert float(Pareto(2, 3).cdf(4.0)) == pytest.approx(0.875)
    assert float(Uniform(2, 6).cdf(1.0)) == 0.0 and float(Uniform(2, 6).cdf(7.0)) == 1.0
    assert float(Deterministic(1.0).cdf(0.999)) == 0.0 and float(Deterministic(1.0).cdf(1.0)) == 1.0


@pytest.mark.parametrize("dist", CONTINUOUS + [Deterministic(2.0)], ids=str)
def test_cdf_shape(dist):
    grid = np.linspace(0, 200, 4001)
    F = dist.cdf(grid)
    assert np.all(np.diff(F) >= 0)
    assert F[0] >= 0 and F[-1] == pytest.approx(1.0, abs=1e-5)
    # right-continuity at every grid point, probed from above
    assert np.allclose(dist.cdf(grid + 1e-12), F, atol=1e-9)


@pytest.mark.parametrize("dist", CONTINUOUS, ids=str)
def test_ks_distance(dist):
    rng = np.random.default_rng(7)
    x = dist.sample_many(rng, N)
    assert ks_distance(dist, x) < 0.005


@pytest.mark.parametrize("dist", [Exponential(0.125), Exponential(0.5), Uniform(2, 6), Pareto(2, 3), Pareto(3, 5)],
                         ids=str)
def test_empirical_mean_within_3_se(dist):
    rng = np.random.default_rng(11)
    x = dist.sample_many(rng, N)
    se = x.std(ddof=1) / math.sqrt(N)
    assert abs(x.mean() - dist.mean()) < 3 * se


def test_exponential_mean_within_one_percent():
    x = Exponential(0.2).sample_many(np.random.default_rng(3), N)
    assert abs(x.mean() - 5.0) / 5.0 < 0.01


def test_pareto_empirical_cdf():
    x = Pareto(2, 3).sample_many(np.random.default_rng(5), N)
    assert abs(np.mean(x <= 4.0) - 0.875) < 0.01


def test_deterministic_sample():
    rng = np.random.default_rng(0)
    assert Deterministic(3.5).sample(rng) == 3.5
    assert np.all(Deterministic(3.5).sample_many(rng, 10) == 3.5)


def test_one_uniform_per_draw():
    a, b = np.random.default_rng(9), np.random.default_rng(9)
    Pareto(2, 3).sample(a)
    b.random()
    assert a.random() == b.random()


def test_scalar_ppf_matches_vector():
    u = np.linspace(0, 0.999, 50)
    for d in CONTINUOUS:
        f = d.scalar_ppf()
        assert np.allclose([f(x) for x in u], d.ppf(u), rtol=1e-14)


def test_scaled_mean():
    for d in CONTINUOUS:
        assert d.scaled(0.25).mean() == pytest.approx(0.25 * d.mean())


@pytest.mark.parametrize("text,expected", [
    ("exp(0.1)", Exponential(0.1)),
    ("EXP( 2 )", Exponential(2.0)),
    ("uniform(2, 6)", Uniform(2, 6)),
    ("U(0,10)", Uniform(0, 10)),
    ("Pareto(2,3)", Pareto(2, 3)),
    ("det(inf)", Deterministic(math.inf)),
    ("Deterministic(0.5)", Deterministic(0.5)),
])
def test_parse(text, expected):
    assert parse_distribution(text) == expected


@pytest.mark.parametrize("text", ["exp()", "exp(1, 2)", "gamma(1)", "uniform(6, 2)", "pareto(2, 1)",
                                  "exp(-1)", "det(-1)", "exp(x)", "exp 1"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_distribution(text)


def test_str_round_trip():
    for d in CONTINUOUS + [Deterministic(math.inf)]:
        assert parse_distribution(str(d)) == d


def test_substreams_independent_and_reproducible():
    a, b = substreams(42, 0), substreams(42, 0)
    assert a["arrivals"].random() == b["arrivals"].random()
    c = substreams(42, 1)
    d = substreams(42, 0)
    draws = {name: g.random() for name, g in d.items()}
    assert len(set(draws.values())) == 4
    assert c["arrivals"].random() != draws["arrivals"]
