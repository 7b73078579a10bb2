"""Gaussian product-kernel density estimates and their box probabilities.

With diagonal bandwidths ``h_j`` the estimated mass of a box has the closed form

    P = 1/(N 2^n) sum_i prod_j [erf(phi_ij(u_j)) - erf(phi_ij(l_j))],
    phi_ij(x) = (x - x_ij) / (sqrt(2) h_j),

and is smooth in the bounds, which gives analytic gradients for the
optimizer.

Two bandwidth rules are available.  ``"per_axis"`` (the default) applies the
one-dimensional rule of thumb ``1.06 sigma_j N^(-1/5)`` to every coordinate;
``"scaled"`` uses ``h_y sigma_j`` with the dimension-dependent ``h_y`` of
``bandwidth_multi``.  The scaled rule smooths more in low dimensions, which
biases box masses of strongly correlated samples downward.  Samples may carry a validity mask; invalid samples (for example
unphysical pressures) keep their share of ``N`` but contribute no mass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .errors import DimensionMismatch, NonpositivePressureSample, ZeroVariance
from .montecarlo import ProbabilityEstimate

SQRT2 = math.sqrt(2.0)
KERNEL_SLOPE = math.sqrt(2.0) / math.sqrt(math.pi)
CHUNK = 1 << 15


def erf_diff(a, b):
    """``erf(a) - erf(b)`` without cancellation in the tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    pos = (a >= 0) & (b >= 0)
    neg = (a <= 0) & (b <= 0)
    out = erf(a) - erf(b)
    out = np.where(pos, erfc(b) - erfc(a), out)
    out = np.where(neg, erfc(-a) - erfc(-b), out)
    return out


def bandwidth_1d(sample) -> float:
    """Rule-of-thumb bandwidth ``1.06 sigma_N N^(-1/5)``."""
    sample = np.asarray(sample, dtype=float).ravel()
    n = sample.size
    if n < 2:
        raise ZeroVariance("need at least two samples for a bandwidth")
    sd = float(sample.std(ddof=1))
    if sd <= 0:
        raise ZeroVariance("sample variance is zero")
    return 1.06 * sd * n ** (-0.2)


def bandwidth_multi(n: int, n_samples: int) -> float:
    """Scale ``h_y = (4 / ((n + 2) N))^(1/(n + 4))``."""
    if n < 1 or n_samples < 1:
        raise ValueError("dimension and sample count must be positive")
    return (4.0 / ((n + 2) * n_samples)) ** (1.0 / (n + 4))


RULES = ("per_axis", "scaled")


def _column_std(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0, ddof=1)
    zero = sd <= 0
    if zero.any():
        warnings.warn("zero sample variance in some dimension; using a bandwidth floor", RuntimeWarning)
        sd = np.where(zero, 1e-12 * (1.0 + np.abs(x[0])), sd)
    return sd


def bandwidths(x: np.ndarray, rule: str = "per_axis", dim: int | None = None) -> np.ndarray:
    """Per-column bandwidths of ``x`` (shape ``(N, n)``).

    ``dim`` overrides the dimension entering ``h_y`` for the scaled rule.
    """
    if rule not in RULES:
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    n_samp = x.shape[0]
    if n_samp < 2:
        raise ZeroVariance("need at least two samples for a bandwidth")
    sd = _column_std(x)
    if rule == "per_axis" or (dim or x.shape[1]) == 1:
        return 1.06 * sd * n_samp ** (-0.2)
    return bandwidth_multi(dim or x.shape[1], n_samp) * sd


@dataclass(frozen=True)
class KdeModel:
    samples: np.ndarray  # (N, n)
    h: np.ndarray  # (n,)
    valid: np.ndarray  # (N,) bool

    @classmethod
    def fit(cls, samples, valid=None, rule: str = "per_axis") -> "KdeModel":
        """Fit bandwidths on the valid rows; see the module notes for ``rule``."""
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        valid = np.ones(x.shape[0], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        good = x[valid]
        if good.shape[0] < 2:
            raise ZeroVariance("need at least two valid samples")
        h = bandwidths(good, rule)
        x = np.where(valid[:, None], x, 0.0)
        return cls(x, h, valid)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def _chunks(self):
        for start in range(0, self.n, CHUNK):
            sl = slice(start, start + CHUNK)
            yield self.samples[sl], self.valid[sl]


def kde_pdf(model: KdeModel, z) -> np.ndarray:
    """Density at points ``z`` (shape ``(n,)`` or ``(M, n)``)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != model.dim:
        raise DimensionMismatch("evaluation point dimension mismatch")
    out = np.zeros(z.shape[0])
    norm = model.n * np.prod(model.h) * (2 * math.pi) ** (model.dim / 2)
    for x, ok in model._chunks():
        u = (z[:, None, :] - x[None, :, :]) / model.h
        out += (np.exp(-0.5 * np.sum(u * u, axis=2)) * ok[None, :]).sum(axis=1)
    return out / norm


def _brackets(x, h, lower, upper):
    pu = (upper[None, :] - x) / (SQRT2 * h)
    pl = (lower[None, :] - x) / (SQRT2 * h)
    return erf_diff(pu, pl), pu, pl


def _check_bounds(model, lower, upper):
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (model.dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (model.dim,))
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    return lower, upper


def box_probability(model: KdeModel, lower, upper) -> ProbabilityEstimate:
    lower, upper = _check_bounds(model, lower, upper)
    total = 0.0
    for x, ok in model._chunks():
        d, _, _ = _brackets(x, model.h, lower, upper)
        total += float(np.sum(np.prod(d, axis=1) * ok))
    value = total / (model.n * 2.0**model.dim)
    return ProbabilityEstimate(float(np.clip(value, 0.0, 1.0)), "kde", model.n)


def grad_box_probability(model: KdeModel, lower, upper, which: str = "upper") -> np.ndarray:
    """Gradient of the box mass with respect to the upper (or lower) bounds."""
    lower, upper = _check_bounds(model, lower, upper)
    grad = np.zeros(model.dim)
    for x, ok in model._chunks():
        d, pu, pl = _brackets(x, model.h, lower, upper)
        if which == "upper":
            slope = KERNEL_SLOPE / model.h * np.exp(-pu**2)
        elif which == "lower":
            slope = -KERNEL_SLOPE / model.h * np.exp(-pl**2)
        else:
            raise ValueError("which must be 'upper' or 'lower'")
        for k in range(model.dim):
            rest = np.prod(np.delete(d, k, axis=1), axis=1)
            grad[k] += float(np.sum(rest * slope[:, k] * ok))
    return grad / (model.n * 2.0**model.dim)


def grad_box_probability_upper(model: KdeModel, lower, upper) -> np.ndarray:
    """Nonnegative gradient of the box mass in the upper bounds."""
    return grad_box_probability(model, lower, upper, "upper")


def grad_probability_inlet(model: KdeModel, lower, upper, p0: float, alpha=None) -> float:
    """Derivative of the box mass with respect to the supply pressure.

    Samples are pressures ``p_k(b_i, p0)``; each moves with
    ``dp_k/dp0 = alpha_k p0 / p_k`` (``alpha_k`` = compressor factor product,
    1 without compressors).  Bandwidths are held fixed.
    """
    lower, upper = _check_bounds(model, lower, upper)
    alpha = np.ones(model.dim) if alpha is None else np.asarray(alpha, dtype=float)
    total = 0.0
    for x, ok in model._chunks():
        if np.any(x[ok] <= 0):
            raise NonpositivePressureSample("pressure samples must be positive")
        d, pu, pl = _brackets(x, model.h, lower, upper)
        dp = alpha[None, :] * p0 / np.where(ok[:, None], x, 1.0)
        slope = KERNEL_SLOPE / model.h * (np.exp(-pl**2) - np.exp(-pu**2)) * dp
        for k in range(model.dim):
            rest = np.prod(np.delete(d, k, axis=1), axis=1)
            total += float(np.sum(rest * slope[:, k] * ok))
    return total / (model.n * 2.0**model.dim)


@dataclass(frozen=True)
class MinMaxKde:
    """Product estimate over paired (min, max) traces, a ``2n``-dimensional KDE."""

    mins: np.ndarray  # (N, n)
    maxs: np.ndarray
    h_min: np.ndarray
    h_max: np.ndarray

    @classmethod
    def fit(cls, mins, maxs, rule: str = "per_axis") -> "MinMaxKde":
        mins = np.asarray(mins, dtype=float)
        maxs = np.asarray(maxs, dtype=float)
        if mins.ndim == 1:
            mins, maxs = mins[:, None], maxs[:, None]
        if mins.shape != maxs.shape:
            raise DimensionMismatch("min and max samples must pair up")
        n_samp, n = mins.shape
        if n_samp < 2:
            raise ZeroVariance("need at least two samples")
        # the scaled rule treats (min, max) as one 2n-dimensional sample
        return cls(mins, maxs, bandwidths(mins, rule, 2 * n), bandwidths(maxs, rule, 2 * n))

    @property
    def n(self) -> int:
        return self.mins.shape[0]

    @property
    def dim(self) -> int:
        return self.mins.shape[1]

    def _terms(self, lower, upper, sl):
        dmin, pu_min, _ = _brackets(self.mins[sl], self.h_min, lower, upper)
        dmax, pu_max, _ = _brackets(self.maxs[sl], self.h_max, lower, upper)
        return dmin, dmax, pu_min, pu_max


def minmax_box_probability(model: MinMaxKde, lower, upper) -> ProbabilityEstimate:
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (model.dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (model.dim,))
    total = 0.0
    for start in range(0, model.n, CHUNK):
        dmin, dmax, _, _ = model._terms(lower, upper, slice(start, start + CHUNK))
        total += float(np.sum(np.prod(dmin * dmax, axis=1)))
    value = total / (model.n * 4.0**model.dim)
    return ProbabilityEstimate(float(np.clip(value, 0.0, 1.0)), "kde", model.n)


def grad_minmax_probability(model: MinMaxKde, lower, upper) -> np.ndarray:
    """Gradient in the upper bounds; each bound enters both factors (product rule)."""
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (model.dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (model.dim,))
    grad = np.zeros(model.dim)
    for start in range(0, model.n, CHUNK):
        dmin, dmax, pu_min, pu_max = model._terms(lower, upper, slice(start, start + CHUNK))
        kmin = KERNEL_SLOPE / model.h_min * np.exp(-pu_min**2)
        kmax = KERNEL_SLOPE / model.h_max * np.exp(-pu_max**2)
        both = dmin * dmax
        for k in range(model.dim):
            rest = np.prod(np.delete(both, k, axis=1), axis=1)
            inner = dmin[:, k] * kmax[:, k] + dmax[:, k] * kmin[:, k]
            grad[k] += float(np.sum(rest * inner))
    return grad / (model.n * 4.0**model.dim)
