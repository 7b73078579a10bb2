import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowprob.boundary import (FourierBoundaryModel, GaussianLoadModel, evaluated_load_distribution,
                               fourier_basis, fourier_coefficients, fourier_eval, gram_matrix, parse_expression,
                               sample_boundary, sample_loads, sigma_nonneg_bound, sphere_sample, truncation_error)
from flowprob.errors import CholeskyFailure, DimensionMismatch, SchemaError


def test_load_samples_moments():
    model = GaussianLoadModel.from_cov([20, 15], [[2.0, 0.5], [0.5, 1.0]])
    b = sample_loads(model, 200000, 5)
    np.testing.assert_allclose(b.mean(axis=0), [20, 15], atol=0.02)
    np.testing.assert_allclose(np.cov(b.T), [[2.0, 0.5], [0.5, 1.0]], atol=0.03)


def test_load_samples_reproducible_and_prefix_stable():
    model = GaussianLoadModel.from_std([4.0], [0.5])
    a = sample_loads(model, 40000, 9)
    b = sample_loads(model, 40000, 9)
    np.testing.assert_array_equal(a, b)
    # chunked streams: a shorter request is a prefix of a longer one
    np.testing.assert_array_equal(sample_loads(model, 1000, 9), a[:1000])


def test_bad_covariance():
    with pytest.raises((CholeskyFailure, DimensionMismatch, ValueError)):
        GaussianLoadModel.from_cov([0, 0], [[1, 2], [2, 1]])


@pytest.mark.parametrize("scheme", ["iid", "antithetic", "orthonormal"])
def test_sphere_points_are_unit(scheme):
    s = sphere_sample(3, 999, 1, scheme)
    assert s.shape == (999, 3)
    np.testing.assert_allclose(np.linalg.norm(s, axis=1), 1.0, atol=1e-12)
    assert abs(s.mean(axis=0)).max() < 0.1


def test_sphere_one_dimension():
    np.testing.assert_array_equal(sphere_sample(1, 10, 0), [[-1.0], [1.0]])


def test_orthonormal_frames_balance():
    s = sphere_sample(4, 8000, 2, "orthonormal")
    np.testing.assert_allclose(s.sum(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(s.T @ s / len(s), np.eye(4) / 4, atol=1e-9)


@pytest.mark.parametrize("horizon, n_f", [(4.0, 29), (10.0, 40), (1.0, 5)])
def test_gram_orthonormal(horizon, n_f):
    G = gram_matrix(n_f, horizon)
    assert np.max(np.abs(G - np.eye(n_f + 1))) <= 1e-8


def test_basis_vanishes_at_zero():
    np.testing.assert_allclose(fourier_basis(10, np.array([0.0]), 3.0), 0.0, atol=1e-15)


def test_coefficients_reproduce_smooth_function():
    f = parse_expression("-2*sin(2*t)")
    c = fourier_coefficients(f, 4.0, 60)
    t = np.linspace(0, 4, 101)
    assert np.max(np.abs(fourier_eval(c, t, 4.0) - f(t))) < 0.02
    assert truncation_error(f, c, 4.0, "L2", 1e-3).passed


def test_truncation_linf_flags_discontinuity():
    step = lambda t: np.where(np.asarray(t) > 1.0, 1.0, 0.0)
    c = fourier_coefficients(step, 2.0, 30)
    rep = truncation_error(step, c, 2.0, "Linf", 0.01)
    assert not rep.passed and not rep.reliable
    assert truncation_error(step, c, 2.0, "L2", 0.05).passed


@pytest.mark.parametrize("text, t, expected", [
    ("sin(t) + 5", 1.0, math.sin(1) + 5),
    ("abs(t - 3)/4 + 2", 1.0, 2.5),
    ("1/((t - 1)**2 + 0.5) + 3", 1.0, 5.0),
    ("-2*sin(2*t) + 5", 0.0, 5.0),
    ("exp(-t)*pi", 0.0, math.pi),
])
def test_expressions(text, t, expected):
    assert parse_expression(text)(np.array([t]))[0] == pytest.approx(expected)


@pytest.mark.parametrize("text", ["__import__('os')", "t.real", "open('x')", "lambda: 1", "sin(t, t)", "x + 1"])
def test_expression_rejects(text):
    with pytest.raises(SchemaError):
        parse_expression(text)


def _model(sigma=0.25):
    return FourierBoundaryModel.from_functions([1], ["-2*sin(2*t) + 5"], sigma, 4.0, 29)


def test_fourier_model_offset_and_moments():
    model = _model()
    assert model.offsets[0] == pytest.approx(5.0)
    t = np.array([0.0, 0.7, 2.0])
    vals, draws = sample_boundary(model, 100000, 3, t)
    assert draws.shape == (100000, 1, 30)
    np.testing.assert_allclose(vals[:, 0, 0], 5.0)
    mean, cov = evaluated_load_distribution(model, np.array([0.7]))
    assert vals[:, 0, 1].mean() == pytest.approx(mean[0], abs=0.01)
    assert vals[:, 0, 1].var() == pytest.approx(cov[0, 0], rel=0.02)
    assert mean[0] == pytest.approx(model.deterministic(np.array([0.7]), 0)[0])


def test_sigma_zero_is_deterministic():
    model = _model(0.0)
    t = np.linspace(0, 4, 11)
    vals, _ = sample_boundary(model, 5, 0, t)
    np.testing.assert_allclose(vals[:, 0, :], np.broadcast_to(model.deterministic(t, 0), (5, 11)))


def test_sigma_nonneg_bound_keeps_three_sigma_draws_nonnegative():
    f = parse_expression("-2*sin(2*t) + 2.5")
    c = fourier_coefficients(lambda t: f(t) - 2.5, 4.0, 29)
    t = np.linspace(0, 4, 401)
    vals = 2.5 + fourier_eval(c, t, 4.0)
    s = sigma_nonneg_bound(c, vals, t, 4.0)
    i = int(np.argmin(vals))
    terms = c * fourier_basis(len(c), t[i:i + 1], 4.0)[:, 0]
    # worst case a_m = 1 -+ 3 sigma against the sign of each term
    worst = 2.5 + np.sum(terms * (1 - 3 * s * np.sign(terms)))
    assert worst == pytest.approx(vals[i] - 3 * s * np.abs(terms).sum())
    assert worst >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 500), st.integers(0, 10**6))
def test_sphere_deterministic_given_seed(n, count, seed):
    np.testing.assert_array_equal(sphere_sample(n, count, seed, "orthonormal"),
                                  sphere_sample(n, count, seed, "orthonormal"))
