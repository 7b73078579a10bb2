import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from flowprob.errors import DimensionMismatch, NonpositivePressureSample, ZeroVariance
from flowprob.kde import (KdeModel, MinMaxKde, bandwidth_1d, bandwidth_multi, bandwidths, box_probability, erf_diff,
                          grad_box_probability, grad_minmax_probability, grad_probability_inlet, kde_pdf,
                          minmax_box_probability)


def central(f, x, k, h):
    e = np.zeros_like(x)
    e[k] = h
    return (f(x + e) - f(x - e)) / (2 * h)


def rel_err(a, b):
    # below 1e-6 the difference quotient is dominated by roundoff
    return abs(a - b) / max(abs(b), 1e-6)


def test_erf_against_mpmath():
    from scipy.special import erf
    assert erf(1.0) == pytest.approx(0.8427007929497149, abs=1e-12)
    for x in np.linspace(-6, 6, 61):
        assert erf(x) == pytest.approx(float(mpmath.erf(x)), abs=1e-15)


def test_erf_diff_tails():
    a, b = 9.0, 8.5
    expect = float(mpmath.erfc(b) - mpmath.erfc(a))
    assert erf_diff(a, b) == pytest.approx(expect, rel=1e-10)
    assert erf_diff(-b, -a) == pytest.approx(expect, rel=1e-10)
    assert erf_diff(1.0, -1.0) == pytest.approx(2 * float(mpmath.erf(1)), abs=1e-15)


def test_bandwidth_rules():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1000, 2)) * [1.0, 3.0]
    sd = x.std(axis=0, ddof=1)
    np.testing.assert_allclose(bandwidths(x), 1.06 * sd * 1000 ** -0.2)
    np.testing.assert_allclose(bandwidths(x, "scaled"), (4 / (4 * 1000)) ** (1 / 6) * sd)
    assert bandwidth_1d(x[:, 0]) == pytest.approx(1.06 * sd[0] * 1000 ** -0.2)
    assert bandwidth_multi(4, 100) == pytest.approx((4 / 600) ** 0.125)
    np.testing.assert_allclose(bandwidths(x[:, :1], "scaled"), bandwidths(x[:, :1]))
    with pytest.raises(ValueError):
        bandwidths(x, "silverman")
    with pytest.raises(ZeroVariance):
        bandwidth_1d([1.0, 1.0, 1.0])


def test_pdf_integrates_to_one():
    rng = np.random.default_rng(1)
    model = KdeModel.fit(rng.normal(size=50))
    total, _ = integrate.quad(lambda z: kde_pdf(model, [[z]])[0], -10, 10, epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DimensionMismatch):
        kde_pdf(model, [[0.0, 1.0]])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_box_mass_against_quadrature(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=(6, n))
    model = KdeModel.fit(x)
    lower = -0.5 * np.ones(n)
    upper = np.linspace(0.4, 0.9, n)
    value = box_probability(model, lower, upper).value
    fun = lambda *z: kde_pdf(model, [z])[0]  # noqa: E731
    ref, _ = integrate.nquad(fun, list(zip(lower, upper)), opts={"epsabs": 1e-12, "epsrel": 1e-12})
    assert abs(value - ref) <= 1e-8


def test_invalid_samples_keep_their_share():
    x = np.array([[1.0], [2.0], [3.0], [100.0]])
    valid = np.array([True, True, True, False])
    model = KdeModel.fit(x, valid)
    assert box_probability(model, [-50], [50]).value == pytest.approx(0.75, abs=1e-9)


instances = st.tuples(st.integers(1, 3), st.integers(2, 40), st.integers(0, 2**31 - 1))


def _instance(n, size, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(size, n)) @ np.diag(rng.uniform(0.5, 2.0, n))
    lower = rng.uniform(-2.0, -0.5, n)
    upper = lower + rng.uniform(0.5, 3.0, n)
    return x, lower, upper


@settings(max_examples=100, deadline=None)
@given(instances)
def test_box_gradients_match_finite_differences(inst):
    x, lower, upper = _instance(*inst)
    model = KdeModel.fit(x)
    gu = grad_box_probability(model, lower, upper, "upper")
    gl = grad_box_probability(model, lower, upper, "lower")
    for k in range(x.shape[1]):
        fu = lambda u: box_probability(model, lower, u).value  # noqa: E731
        fl = lambda lo: box_probability(model, lo, upper).value  # noqa: E731
        assert rel_err(gu[k], central(fu, upper, k, 1e-5)) <= 1e-4
        assert rel_err(gl[k], central(fl, lower, k, 1e-5)) <= 1e-4


@settings(max_examples=100, deadline=None)
@given(instances)
def test_minmax_gradient_matches_finite_differences(inst):
    x, lower, upper = _instance(*inst)
    mins = x - 0.3
    maxs = x + np.abs(np.random.default_rng(inst[2] + 1).normal(size=x.shape))
    model = MinMaxKde.fit(mins, maxs)
    g = grad_minmax_probability(model, lower, upper + 1.0)
    f = lambda u: minmax_box_probability(model, lower, u).value  # noqa: E731
    for k in range(x.shape[1]):
        assert rel_err(g[k], central(f, upper + 1.0, k, 1e-5)) <= 1e-4


@settings(max_examples=100, deadline=None)
@given(instances)
def test_inlet_gradient_matches_finite_differences(inst):
    n, size, seed = inst
    rng = np.random.default_rng(seed)
    # p_k(p0) = sqrt(a_k p0^2 - c_ik) with fixed loss terms c_ik
    a = rng.uniform(0.8, 1.2, n)
    c = rng.uniform(0.0, 800.0, (size, n))
    lower = rng.uniform(20.0, 35.0, n)
    upper = lower + rng.uniform(10.0, 30.0, n)
    p0 = 50.0
    h = bandwidths(np.sqrt(a * p0**2 - c))

    def mass(q):
        return box_probability(KdeModel(np.sqrt(a * q**2 - c), h, np.ones(size, bool)), lower, upper).value

    model = KdeModel(np.sqrt(a * p0**2 - c), h, np.ones(size, bool))
    g = grad_probability_inlet(model, lower, upper, p0, a)
    fd = (mass(p0 + 1e-4) - mass(p0 - 1e-4)) / 2e-4
    assert rel_err(g, fd) <= 1e-4


def test_inlet_gradient_rejects_nonpositive():
    model = KdeModel(np.array([[1.0], [-1.0]]), np.array([0.5]), np.ones(2, bool))
    with pytest.raises(NonpositivePressureSample):
        grad_probability_inlet(model, [0.0], [2.0], 3.0)


def test_minmax_reduces_to_product():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 1))
    model = MinMaxKde.fit(x, x + 1.0)
    got = minmax_box_probability(model, [-1.0], [2.0]).value
    from flowprob.kde import _brackets
    d1, _, _ = _brackets(x, model.h_min, np.array([-1.0]), np.array([2.0]))
    d2, _, _ = _brackets(x + 1.0, model.h_max, np.array([-1.0]), np.array([2.0]))
    assert got == pytest.approx(float(np.mean(d1[:, 0] * d2[:, 0])) / 4, abs=1e-14)


def test_kde_close_to_exact_gaussian_box():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(20000, 1))
    got = box_probability(KdeModel.fit(x), [-1.0], [1.0]).value
    # smoothing inflates the variance by h^2
    h = bandwidth_1d(x)
    expect = math.erf(1 / math.sqrt(2 * (1 + h * h)))
    assert got == pytest.approx(expect, abs=0.01)
