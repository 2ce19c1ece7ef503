import math

import numpy as np
import pytest

from rrulab import (
    DistributionError,
    expect_fraction,
    finite_discrete,
    make_dist,
    moments,
    point_mass,
    quantile,
    sample_pair,
    two_point,
    uniform_interval,
)
from rrulab.reinforce_dist import spec_from_kv, spec_to_kv


def test_point_mass_basic():
    d = make_dist(point_mass(2, 4))
    assert moments(d) == (2.0, 4.0, 0.0)
    assert quantile(d, 0.7) == 2.0
    assert quantile(d, 0.0) == 2.0
    assert quantile(d, 1.0) == 2.0


def test_two_point_mean_constraint_forces_p():
    d = make_dist(two_point(4, 1))
    # P(R=0)=0.75, P(R=4)=0.25
    assert d.atoms.tolist() == [0.0, 4.0]
    assert d.probs.tolist() == [0.75, 0.25]
    assert moments(d) == (1.0, 4.0, 3.0)


def test_two_point_quantile_generalized_inverse():
    d = make_dist(two_point(4, 1))
    # F(0) = 0.75; inf{x: F(x) >= u}
    assert quantile(d, 0.75) == 0.0
    assert quantile(d, 0.76) == 4.0


def test_finite_discrete_step_cdf_inverse():
    d = make_dist(finite_discrete([1, 3], [0.5, 0.5]))
    assert quantile(d, 0.5) == 1.0
    assert quantile(d, 0.51) == 3.0


def test_finite_discrete_bad_probability_sum():
    with pytest.raises(DistributionError, match="sum"):
        make_dist(finite_discrete([1, 3], [0.5, 0.49], beta=4))


@pytest.mark.parametrize(
    "spec",
    [
        point_mass(5, 4),                     # support outside [0, beta]
        two_point(4, 5),                      # mean exceeds beta
        finite_discrete([1, 5], [0.5, 0.5], beta=4),
        finite_discrete([1, 3], [0.6, -0.1], beta=4),
        uniform_interval(2, 1, beta=4),
        uniform_interval(-1, 1, beta=4),
        point_mass(1, beta=-2),
    ],
)
def test_invalid_specs_rejected(spec):
    with pytest.raises(DistributionError):
        make_dist(spec)


def test_uniform_moments_closed_form():
    d = make_dist(uniform_interval(0, 2))
    mean, second, var = moments(d)
    assert mean == 1.0
    assert math.isclose(second, 4.0 / 3.0, rel_tol=1e-15)
    assert math.isclose(var, 1.0 / 3.0, rel_tol=1e-14)


def test_uniform_moments_against_monte_carlo_oracle():
    # independent inverse-transform oracle with numpy's own generator
    d = make_dist(uniform_interval(0, 2))
    rng = np.random.default_rng(20260809)
    s = quantile(d, rng.random(10**6))
    for value, target, spread in [
        (s.mean(), 1.0, s.std(ddof=1)),
        ((s**2).mean(), 4.0 / 3.0, (s**2).std(ddof=1)),
    ]:
        assert abs(value - target) <= 4 * spread / 1000.0


@pytest.mark.parametrize(
    "spec",
    [
        point_mass(2, 4),
        two_point(4, 1),
        finite_discrete([0.5, 1, 3], [0.25, 0.5, 0.25], beta=4),
        uniform_interval(0.5, 3.5, beta=4),
    ],
)
def test_mean_matches_inverse_transform_sample(spec):
    d = make_dist(spec)
    rng = np.random.default_rng(42)
    s = quantile(d, rng.random(10**6))
    se = s.std(ddof=1) / 1000.0
    assert abs(s.mean() - d.mean) <= max(4 * se, 1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        point_mass(2, 4),
        two_point(4, 1),
        finite_discrete([0, 1, 3], [0.2, 0.5, 0.3], beta=4),
        uniform_interval(0, 2),
        uniform_interval(1, 1.5, beta=2),
    ],
)
def test_quantile_nondecreasing_on_grid(spec):
    d = make_dist(spec)
    grid = np.linspace(0.0, 1.0, 10_000)
    q = quantile(d, grid)
    assert np.all(np.diff(q) >= 0)
    assert q.min() >= 0.0 and q.max() <= d.beta


def test_expect_fraction_point_mass_exact():
    assert expect_fraction(make_dist(point_mass(1)), 6.0) == 1.0 / 7.0


def test_expect_fraction_two_point_exact():
    assert expect_fraction(make_dist(two_point(4, 1)), 6.0) == 0.25 * (4.0 / 10.0)


def test_expect_fraction_uniform_vs_riemann_oracle():
    # frozen from a 1e7-node midpoint Riemann rule (equals 1 - ln 2)
    oracle = 0.306852819440055
    val = expect_fraction(make_dist(uniform_interval(0, 2)), 2.0)
    assert abs(val - oracle) <= 1e-8


def test_expect_fraction_uniform_closed_form_sweep():
    # closed form: 1 - d*log((b+d)/(a+d))/(b-a); quadrature contract 1e-10
    rng = np.random.default_rng(7)
    for _ in range(200):
        b = rng.uniform(1e-3, 20.0)
        a = rng.uniform(0.0, 0.999 * b)
        d = 10 ** rng.uniform(-6, 6)
        dist = make_dist(uniform_interval(a, b, beta=max(b, 1.0)))
        exact = 1.0 - d * math.log1p((b - a) / (a + d)) / (b - a)
        assert abs(expect_fraction(dist, d) - exact) <= 1e-10


def test_expect_fraction_vector_matches_scalar_bitwise():
    dists = [
        make_dist(uniform_interval(0, 2)),
        make_dist(two_point(4, 1)),
        make_dist(finite_discrete([0.5, 1, 3], [0.25, 0.5, 0.25], beta=4)),
    ]
    ds = np.array([0.3, 1.0, 6.0, 123.0])
    for dist in dists:
        vec = expect_fraction(dist, ds)
        for i, d in enumerate(ds):
            assert vec[i] == expect_fraction(dist, float(d))


@pytest.mark.parametrize(
    "spec",
    [
        point_mass(2, 4),
        two_point(4, 1),
        finite_discrete([0, 1, 3], [0.2, 0.5, 0.3], beta=4),
        uniform_interval(0, 2, beta=4),
    ],
)
def test_expect_fraction_concave_envelope(spec):
    # mean/(beta+d) <= E[R/(R+d)] <= mean/(mean+d), and <= beta/(beta+d)
    d = make_dist(spec)
    rng = np.random.default_rng(11)
    for _ in range(300):
        t = 10 ** rng.uniform(-2, 5)
        val = expect_fraction(d, t)
        assert (d.mean / d.beta) * (d.beta / (d.beta + t)) <= val <= d.mean / (d.mean + t)
        assert 0.0 <= val <= d.beta / (d.beta + t)


def test_expect_fraction_rejects_nonpositive_d():
    d = make_dist(point_mass(1))
    with pytest.raises(ValueError):
        expect_fraction(d, 0.0)
    with pytest.raises(ValueError):
        expect_fraction(d, -1.0)


def test_quantile_rejects_out_of_range():
    d = make_dist(point_mass(1))
    with pytest.raises(ValueError):
        quantile(d, -0.1)
    with pytest.raises(ValueError):
        quantile(d, 1.1)


def test_sample_pair_modes():
    assert sample_pair("independent", 0.3, 0.8) == (0.3, 0.8)
    assert sample_pair("comonotone", 0.3, 0.8) == (0.3, 0.3)
    v, w = sample_pair("antithetic", 0.3, 0.8)
    assert (v, w) == (0.3, 0.7)
    with pytest.raises(ValueError):
        sample_pair("gaussian", 0.3, 0.8)


def test_sample_pair_preserves_uniform_marginals():
    rng = np.random.default_rng(5)
    u1, u2 = rng.random(20_000), rng.random(20_000)
    for mode in ("independent", "comonotone", "antithetic"):
        v, w = sample_pair(mode, u1, u2)
        for s in (v, w):
            # KS distance against U(0,1)
            srt = np.sort(s)
            gaps = np.maximum(
                np.abs(np.arange(1, s.size + 1) / s.size - srt),
                np.abs(np.arange(0, s.size) / s.size - srt),
            )
            assert gaps.max() <= 0.02


def test_kv_roundtrip():
    specs = [
        point_mass(2, 4),
        two_point(4, 1),
        finite_discrete([1, 3], [0.5, 0.5], beta=4),
        uniform_interval(0, 2),
    ]
    for spec in specs:
        text = spec_to_kv(spec)
        back = spec_from_kv(text)
        assert back == spec
    assert spec_to_kv(two_point(4, 1)) == "kind=two_point beta=4 mean=1"


def test_kv_rejects_garbage():
    with pytest.raises(DistributionError):
        spec_from_kv("kind=gamma beta=1")
    with pytest.raises(DistributionError):
        spec_from_kv("beta=1 mean=1")
    with pytest.raises(DistributionError):
        spec_from_kv("kind=two_point beta=two mean=1")
