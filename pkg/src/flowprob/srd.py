"""Spheric radial decomposition.

For ``b ~ N(mu, L L^T)`` and a direction ``s`` on the unit sphere the ray
``b_s(r) = mu + r L s`` meets the feasible set in a union of intervals
``M_s``; then ``P(b in M) = E_s[ mu_chi(M_s) ]`` with the chi law of ``n``
degrees of freedom.  Constraints along a ray are quadratic (stationary
trees) or linear (transport at a fixed time), so ``M_s`` is found from the
constraint roots: between consecutive roots feasibility cannot change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .boundary import FourierBoundaryModel, GaussianLoadModel, fourier_basis
from .errors import DimensionMismatch
from .gas import TreeQuadraticForm
from .montecarlo import ProbabilityEstimate

COEF_EPS = 1e-12
MERGE_GAP = 1e-12


def chi_cdf(r, n: int):
    """CDF of the chi distribution with ``n`` degrees of freedom."""
    r = np.asarray(r, dtype=float)
    out = gammainc(n / 2.0, 0.5 * np.square(np.where(np.isinf(r), 0.0, r)))
    return np.where(np.isinf(r), 1.0, out)


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted disjoint closed intervals in ``[0, inf]``."""

    intervals: tuple[tuple[float, float], ...]

    @classmethod
    def from_pairs(cls, pairs) -> "IntervalUnion":
        items = sorted((float(a), float(b)) for a, b in pairs if b >= a)
        merged: list[list[float]] = []
        for a, b in items:
            if merged and a - merged[-1][1] < MERGE_GAP:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return cls(tuple((a, b) for a, b in merged))

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls(())

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        for a, b in self.intervals:
            for c, d in other.intervals:
                lo, hi = max(a, c), min(b, d)
                if lo <= hi:
                    out.append((lo, hi))
        return IntervalUnion.from_pairs(out)

    def measure(self, n: int) -> float:
        return float(sum(chi_cdf(b, n) - chi_cdf(a, n) for a, b in self.intervals))

    def __contains__(self, r: float) -> bool:
        return any(a <= r <= b for a, b in self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals


@dataclass(frozen=True)
class RaySet:
    direction: np.ndarray
    regular: float
    feasible: IntervalUnion


def regular_range(s, mu, factor) -> float:
    """Largest ``r`` with ``mu + r L s >= 0``; ``inf`` if the ray never leaves."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0):
        return 0.0
    ls = np.asarray(factor, dtype=float) @ np.asarray(s, dtype=float)
    neg = ls < 0
    if not neg.any():
        return math.inf
    return float(np.min(-mu[neg] / ls[neg]))


def _regular_batch(mu, LS):
    """Vectorized regular range for direction images ``LS`` of shape (N, n)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(LS < 0, -mu[None, :] / LS, np.inf)
    out = ratio.min(axis=1)
    if np.any(mu < 0):
        out[:] = 0.0
    return out


def _roots(a, b, c):
    """Real roots of ``a r^2 + b r + c`` per row; NaN where absent. Shape (..., 2)."""
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c)))
    r1 = np.full(a.shape, np.nan)
    r2 = np.full(a.shape, np.nan)
    quad = np.abs(a) >= COEF_EPS
    lin = ~quad & (np.abs(b) >= COEF_EPS)
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - 4 * a * c
        # a discriminant at roundoff level is a double root; sqrt would inflate the error to sqrt(eps)
        disc = np.where(np.abs(disc) <= 16 * np.finfo(float).eps * (b * b + np.abs(4 * a * c)), 0.0, disc)
        ok = quad & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        # numerically stable pair
        qq = -0.5 * (b + np.copysign(sq, b))
        ra = np.where(ok, qq / np.where(quad, a, 1.0), np.nan)
        rb = np.where(ok & (qq != 0), c / np.where(qq != 0, qq, 1.0), np.where(ok, 0.0, np.nan))
        r1 = np.where(ok, ra, r1)
        r2 = np.where(ok, rb, r2)
        r1 = np.where(lin, -c / np.where(lin, b, 1.0), r1)
    return np.stack([r1, r2], axis=-1)


def _ray_measure(coef_a, coef_b, coef_c, r_reg, n, return_sets=False):
    """Chi measure of ``{0 <= r <= r_reg : a r^2 + b r + c >= 0 for all constraints}``.

    Coefficient arrays have shape (N, K).
    """
    N = coef_a.shape[0]
    roots = _roots(coef_a, coef_b, coef_c).reshape(N, -1)
    roots = np.where((roots > 0) & (roots < r_reg[:, None]), roots, np.nan)
    bps = np.concatenate([np.zeros((N, 1)), roots, r_reg[:, None]], axis=1)
    bps = np.sort(bps, axis=1)  # NaN sorts last
    left, right = bps[:, :-1], bps[:, 1:]
    valid = ~np.isnan(left) & ~np.isnan(right) & (right > left)
    with np.errstate(invalid="ignore"):
        mid = np.where(np.isinf(right), left + 1.0 + np.abs(left), 0.5 * (left + right))
    mid = np.where(valid, mid, 0.0)
    val = (coef_a[:, None, :] * mid[..., None] ** 2 + coef_b[:, None, :] * mid[..., None]
           + coef_c[:, None, :])
    ok = valid & np.all(val >= 0, axis=2)
    seg = np.where(ok, chi_cdf(np.where(valid, right, 0.0), n) - chi_cdf(np.where(valid, left, 0.0), n), 0.0)
    measure = seg.sum(axis=1)
    if not return_sets:
        return measure
    sets = [IntervalUnion.from_pairs([(l, r) for l, r, f in zip(left[i], right[i], ok[i]) if f])
            for i in range(N)]
    return measure, sets


def _stationary_coeffs(form: TreeQuadraticForm, model: GaussianLoadModel, lower, upper, S):
    """Quadratic coefficients of the 2K pressure constraints along rays ``S`` (N, n)."""
    u = form.Q @ model.mean  # edge flows at the mean
    V = (S @ model.factor.T) @ form.Q.T  # (N, E) flow change per unit r
    wphi = form.W * form.phi[:, None]  # (E, K)
    A = (V**2) @ wphi
    B = 2.0 * (V * u[None, :]) @ wphi
    C = (u**2) @ wphi
    top = form.alpha * form.p0**2
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    # top - g(r) >= lower^2   and   g(r) + upper^2 - top >= 0
    ca = np.concatenate([-A, A], axis=1)
    cb = np.concatenate([-B, B], axis=1)
    cc_low = np.broadcast_to(top - C - lower**2, A.shape)
    up_sq = np.where(np.isinf(upper), 1e300, upper**2)
    cc_up = np.broadcast_to(C + up_sq - top, A.shape)
    cc = np.concatenate([cc_low, cc_up], axis=1)
    return ca, cb, cc


def stationary_ray_set(form: TreeQuadraticForm, model: GaussianLoadModel, lower, upper, s) -> RaySet:
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if s.shape[1] != model.dim:
        raise DimensionMismatch("direction dimension does not match the load model")
    ca, cb, cc = _stationary_coeffs(form, model, lower, upper, s)
    r_reg = _regular_batch(model.mean, s @ model.factor.T)
    _, sets = _ray_measure(ca, cb, cc, r_reg, model.dim, return_sets=True)
    return RaySet(s[0], float(r_reg[0]), sets[0])


def srd_probability(form: TreeQuadraticForm, model: GaussianLoadModel, lower, upper,
                    directions: np.ndarray, seed: int | None = None, chunk: int = 4096) -> ProbabilityEstimate:
    """Mean chi measure of the ray sets over the given sphere points."""
    directions = np.atleast_2d(directions)
    total = 0.0
    for start in range(0, directions.shape[0], chunk):
        S = directions[start:start + chunk]
        ca, cb, cc = _stationary_coeffs(form, model, lower, upper, S)
        r_reg = _regular_batch(model.mean, S @ model.factor.T)
        total += float(_ray_measure(ca, cb, cc, r_reg, model.dim).sum())
    value = total / directions.shape[0]
    return ProbabilityEstimate(min(max(value, 0.0), 1.0), "srd", directions.shape[0], None, seed)


def ray_set_measure(ray: RaySet, n: int) -> float:
    return ray.feasible.measure(n)


# -- fixed-time transport -----------------------------------------------------

@dataclass(frozen=True)
class LinearTraceLaw:
    """Observation values ``y = const + G z`` for Gaussian ``z ~ N(mean, cov)``.

    ``terms`` lists the (source index, time) pair behind each component of ``z``.
    """

    const: np.ndarray
    G: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray
    terms: tuple[tuple[int, float], ...]


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))[None, :]


def fixed_time_law(tree, model: FourierBoundaryModel, observe, t_star: float) -> LinearTraceLaw:
    """Gaussian law of the observation traces at time ``t_star``."""
    index = {node: k for k, node in enumerate(model.nodes)}
    rows, consts, pairs = [], [], {}
    for v in observe:
        const, terms = tree.affine_trace(v, t_star, None)
        row = {}
        for src, tau, w in terms:
            key = (index[src], round(tau, 12))
            pairs.setdefault(key, len(pairs))
            row[pairs[key]] = row.get(pairs[key], 0.0) + w
        rows.append(row)
        consts.append(const)
    keys = sorted(pairs, key=pairs.get)
    # component weights sum_m a0_{m,k} psi_m(tau)
    wts = np.stack([model.coeffs[k] * fourier_basis(model.n_terms, np.array([tau]), model.horizon)[:, 0]
                    for k, tau in keys]) if keys else np.zeros((0, model.n_terms))
    ccov = model.coefficient_cov()
    mean = np.array([model.offsets[k] for k, _ in keys]) + wts.sum(axis=1) if keys else np.zeros(0)
    cov = np.array([[ccov[k1, k2] * float(wts[i] @ wts[j]) for j, (k2, _) in enumerate(keys)]
                    for i, (k1, _) in enumerate(keys)]).reshape(len(keys), len(keys))
    G = np.zeros((len(observe), len(keys)))
    for i, row in enumerate(rows):
        for j, w in row.items():
            G[i, j] = w
    return LinearTraceLaw(np.array(consts), G, mean, cov, _psd_factor(cov) if keys else cov, tuple(keys))


def dynamic_ray_set(law: LinearTraceLaw, lower, upper, s, grid_check=None) -> RaySet:
    """``M_s`` for fixed-time transport: a single interval from the linear bounds."""
    measure_sets = _dynamic_measure(law, lower, upper, np.atleast_2d(s), grid_check, return_sets=True)
    _, sets, r_reg = measure_sets
    return RaySet(np.asarray(s, dtype=float), float(r_reg[0]), sets[0])


def _dynamic_measure(law: LinearTraceLaw, lower, upper, S, grid_check=None, return_sets=False):
    n = law.mean.size
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    LS = S @ law.factor.T  # (N, n)
    K0 = law.const + law.G @ law.mean  # (K,)
    K1 = LS @ law.G.T  # (N, K)
    up = np.where(np.isinf(upper), 1e300, upper)
    cb = np.concatenate([K1, -K1], axis=1)
    cc = np.broadcast_to(np.concatenate([K0 - lower, up - K0]), cb.shape)
    ca = np.zeros_like(cb)
    r_reg = _regular_batch(law.mean, LS)
    if grid_check is not None:
        r_reg = np.minimum(r_reg, grid_check(S))
    out = _ray_measure(ca, cb, cc, r_reg, n, return_sets=return_sets)
    if return_sets:
        return out[0], out[1], r_reg
    return out


def dynamic_srd_probability(law: LinearTraceLaw, lower, upper, directions, grid_check=None,
                            seed: int | None = None) -> ProbabilityEstimate:
    """Fixed-time SRD with ``n`` = number of Gaussian trace components."""
    n = law.mean.size
    if n == 0:
        K0 = law.const
        ok = bool(np.all(K0 >= np.asarray(lower)) and np.all(K0 <= np.asarray(upper)))
        return ProbabilityEstimate(float(ok), "srd", 0, None, seed)
    directions = np.atleast_2d(directions)
    m = _dynamic_measure(law, lower, upper, directions, grid_check)
    return ProbabilityEstimate(float(np.clip(m.mean(), 0, 1)), "srd", directions.shape[0], None, seed)


def boundary_grid_check(model: FourierBoundaryModel, law: LinearTraceLaw, t: np.ndarray):
    """Regular-range limit from nonnegativity of whole boundary functions on a grid.

    Applies when every source appears in exactly one trace component; the
    component's direction entry then scales that source's standard deviation
    at each grid time.
    """
    srcs = [k for k, _ in law.terms]
    if len(set(srcs)) != len(srcs) or model.coef_corr is not None:
        return None
    psi = fourier_basis(model.n_terms, t, model.horizon)
    means = np.stack([model.offsets[k] + model.coeffs[k] @ psi for k in srcs])  # (n, T)
    stds = np.stack([model.sigma[k] * np.sqrt(((model.coeffs[k][:, None] * psi) ** 2).sum(axis=0))
                     for k in srcs])

    def check(S):
        # b_k(t) = mean_k(t) + r * std_k(t) * s_k >= 0 on the grid
        slope = S[:, :, None] * stds[None, :, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            lim = np.where(slope < 0, -means[None] / slope, np.inf)
        return lim.reshape(S.shape[0], -1).min(axis=1)

    return check
