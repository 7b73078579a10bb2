"""Random loads and random boundary functions.

Gaussian loads ``b = mu + L z`` and Fourier-randomized boundary functions

    b_k(t) = offset_k + sum_m a_{m,k} a0_{m,k} psi_m(t),    a_{m,k} ~ N(1, sigma_k^2)

with the sine basis ``psi_m(t) = sqrt(2/T) sin((pi/2 + m pi) t / T)`` that
vanishes at ``t = 0``.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .errors import CholeskyFailure, DimensionMismatch, SchemaError

CHUNK = 1 << 14
QUAD_POINTS = 2001


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream for one fixed-size chunk of samples."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def _chunked_normal(seed: int, n_samples: int, dim: int) -> np.ndarray:
    # fixed chunking keeps the draw independent of how callers batch or parallelize
    out = np.empty((n_samples, dim))
    for c, start in enumerate(range(0, n_samples, CHUNK)):
        stop = min(start + CHUNK, n_samples)
        out[start:stop] = chunk_rng(seed, c).standard_normal((stop - start, dim))
    return out


@dataclass(frozen=True)
class GaussianLoadModel:
    mean: np.ndarray
    cov: np.ndarray
    factor: np.ndarray

    @classmethod
    def from_cov(cls, mean, cov) -> "GaussianLoadModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise CholeskyFailure("covariance is not symmetric")
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure("covariance is not positive definite") from exc
        return cls(mean, cov, factor)

    @classmethod
    def from_std(cls, mean, std) -> "GaussianLoadModel":
        """Independent components; works for spreads whose square underflows."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
        if np.any(std <= 0):
            raise CholeskyFailure("standard deviations must be positive")
        return cls(mean, np.diag(std**2), np.diag(std))

    @property
    def dim(self) -> int:
        return self.mean.size


def sample_loads(model: GaussianLoadModel, n_samples: int, seed: int) -> np.ndarray:
    """``n_samples`` draws of ``mu + L z``; negative entries are kept."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    z = _chunked_normal(seed, n_samples, model.dim)
    return model.mean + z @ model.factor.T


def sphere_sample(n: int, n_samples: int, seed: int, scheme: str = "iid") -> np.ndarray:
    """Points on the unit sphere in R^n.

    ``scheme``: ``"iid"`` normalizes Gaussian vectors; ``"antithetic"``
    mirrors the first half; ``"orthonormal"`` uses the ``2n`` points
    ``+-q_j`` of randomly rotated orthonormal frames (each marginal is still
    uniform).  For ``n == 1`` the sphere is ``{-1, +1}`` and is returned as is.
    """
    if n < 1:
        raise ValueError("dimension must be positive")
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if scheme == "iid":
        z = _chunked_normal(seed, n_samples, n)
    elif scheme == "antithetic":
        half = _chunked_normal(seed, (n_samples + 1) // 2, n)
        z = np.concatenate([half, -half])[:n_samples]
    elif scheme == "orthonormal":
        frames = -(-n_samples // (2 * n))
        g = _chunked_normal(seed, frames * n, n).reshape(frames, n, n)
        q, r = np.linalg.qr(g)
        # sign fix makes the rotation Haar distributed
        q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
        cols = np.transpose(q, (0, 2, 1))
        z = np.stack([cols, -cols], axis=1).reshape(-1, n)[:n_samples]
    else:
        raise ValueError(f"unknown sphere scheme {scheme!r}")
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# -- Fourier basis ---------------------------------------------------------

def fourier_basis(n_terms: int, t, horizon: float) -> np.ndarray:
    """Matrix ``psi[m, j] = psi_m(t_j)`` for ``m < n_terms``."""
    t = np.asarray(t, dtype=float)
    m = np.arange(n_terms)[:, None]
    return math.sqrt(2.0 / horizon) * np.sin((0.5 + m) * math.pi * t[None, ...] / horizon)


def quad_grid(horizon: float, points: int = QUAD_POINTS) -> np.ndarray:
    return np.linspace(0.0, horizon, points)


def fourier_coefficients(func: Callable, horizon: float, n_f: int, points: int = QUAD_POINTS) -> np.ndarray:
    """``a0_m = int_0^T f psi_m dt`` for ``m = 0..n_f`` by composite Simpson."""
    t = quad_grid(horizon, points)
    vals = np.broadcast_to(np.asarray(func(t), dtype=float), t.shape)
    psi = fourier_basis(n_f + 1, t, horizon)
    return simpson(psi * vals[None, :], x=t, axis=1)


def gram_matrix(n_f: int, horizon: float, points: int = QUAD_POINTS) -> np.ndarray:
    t = quad_grid(horizon, points)
    psi = fourier_basis(n_f + 1, t, horizon)
    return simpson(psi[:, None, :] * psi[None, :, :], x=t, axis=2)


def fourier_eval(coeffs: np.ndarray, t, horizon: float) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    return coeffs @ fourier_basis(coeffs.shape[-1], t, horizon)


@dataclass(frozen=True)
class TruncationReport:
    kind: str
    value: float
    threshold: float
    passed: bool
    reliable: bool = True


def _looks_discontinuous(func: Callable, horizon: float) -> bool:
    fine = np.linspace(0.0, horizon, 20001)
    vals = np.asarray(func(fine), dtype=float)
    jump_fine = np.max(np.abs(np.diff(vals)))
    jump_coarse = np.max(np.abs(np.diff(vals[::2])))
    # a jump survives refinement, a continuous increment roughly halves
    return jump_coarse > 0 and jump_fine > 0.9 * jump_coarse and jump_fine > 1e-8


def truncation_error(func: Callable, coeffs: np.ndarray, horizon: float, kind: str = "L2",
                     theta: float = 0.01, points: int = QUAD_POINTS) -> TruncationReport:
    """Check a truncated series against the L2 or Linf criterion."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    t = quad_grid(horizon, points)
    vals = np.broadcast_to(np.asarray(func(t), dtype=float), t.shape)
    resid = vals - fourier_eval(coeffs, t, horizon)
    if kind == "L2":
        err = float(simpson(resid**2, x=t))
        thr = theta * float(simpson(vals**2, x=t))
        return TruncationReport("L2", err, thr, err <= thr)
    if kind == "Linf":
        err = float(np.max(np.abs(resid)))
        thr = theta * float(vals.max() - vals.min())
        reliable = not _looks_discontinuous(func, horizon)
        return TruncationReport("Linf", err, thr, err <= thr, reliable)
    raise ValueError(f"unknown criterion {kind!r}")


# -- boundary expressions ----------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs, "sqrt": np.sqrt,
          "log": np.log, "tanh": np.tanh}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an arithmetic expression in ``t`` into a vectorized function.

    Allowed: numbers, ``t``, ``pi``, ``+ - * / **``, and sin, cos, exp,
    abs, sqrt, log, tanh.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise SchemaError(f"cannot parse boundary expression {text!r}") from exc

    def ev(node, t):
        if isinstance(node, ast.Expression):
            return ev(node.body, t)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "t":
                return t
            if node.id == "pi":
                return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, t), ev(node.right, t))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            val = ev(node.operand, t)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            return _FUNCS[node.func.id](ev(node.args[0], t))
        raise SchemaError(f"unsupported element in boundary expression {text!r}")

    ev(tree, np.zeros(1))  # reject bad input at parse time

    def func(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(ev(tree, t), t.shape).astype(float)

    func.expression = text  # type: ignore[attr-defined]
    return func


# -- Fourier boundary model --------------------------------------------------

@dataclass(frozen=True)
class FourierBoundaryModel:
    """Randomized boundary data for a list of source nodes.

    ``coeffs[k]`` holds ``a0_{m,k}`` for ``m = 0..N_F`` of the shifted
    function ``b_k - b_k(0)``; ``offsets[k] = b_k(0)``.
    """

    nodes: tuple[int, ...]
    offsets: np.ndarray
    coeffs: np.ndarray
    sigma: np.ndarray
    horizon: float
    functions: tuple = field(default=(), repr=False, compare=False)
    coef_corr: np.ndarray | None = None

    @classmethod
    def from_functions(cls, nodes, funcs, sigma, horizon: float, n_f: int,
                       coef_corr=None) -> "FourierBoundaryModel":
        funcs = [parse_expression(f) if isinstance(f, str) else f for f in funcs]
        offsets = np.array([float(np.asarray(f(np.array([0.0])))[0]) for f in funcs])
        coeffs = np.stack([
            fourier_coefficients(lambda t, f=f, c=c: f(t) - c, horizon, n_f)
            for f, c in zip(funcs, offsets)
        ])
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), offsets.shape).copy()
        corr = None if coef_corr is None else np.asarray(coef_corr, dtype=float)
        return cls(tuple(nodes), offsets, coeffs, sigma, float(horizon), tuple(funcs), corr)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_terms(self) -> int:
        return self.coeffs.shape[1]

    def coefficient_cov(self) -> np.ndarray:
        corr = np.eye(self.n_nodes) if self.coef_corr is None else self.coef_corr
        return corr * np.outer(self.sigma, self.sigma)

    def draw_coefficients(self, n_samples: int, seed: int) -> np.ndarray:
        """Draws ``a_{m,k}`` with shape ``(N, n_nodes, n_terms)``."""
        z = _chunked_normal(seed, n_samples, self.n_nodes * self.n_terms)
        z = z.reshape(n_samples, self.n_terms, self.n_nodes)
        if self.coef_corr is None:
            a = 1.0 + z * self.sigma[None, None, :]
        else:
            fac = np.linalg.cholesky(self.coefficient_cov())
            a = 1.0 + z @ fac.T
        return np.transpose(a, (0, 2, 1))

    def evaluate(self, draws: np.ndarray, t, node_index: int) -> np.ndarray:
        """Realizations of node ``node_index`` at times ``t``: shape ``(N, len(t))``."""
        psi = fourier_basis(self.n_terms, t, self.horizon)
        weights = draws[:, node_index, :] * self.coeffs[node_index][None, :]
        return self.offsets[node_index] + weights @ psi

    def deterministic(self, t, node_index: int) -> np.ndarray:
        return self.offsets[node_index] + fourier_eval(self.coeffs[node_index], t, self.horizon)


def sample_boundary(model: FourierBoundaryModel, n_samples: int, seed: int, t) -> tuple[np.ndarray, np.ndarray]:
    """Realizations on ``t`` with shape ``(N, n_nodes, len(t))`` plus the coefficient draws."""
    draws = model.draw_coefficients(n_samples, seed)
    vals = np.stack([model.evaluate(draws, t, k) for k in range(model.n_nodes)], axis=1)
    return vals, draws


def sigma_nonneg_bound(coeffs: np.ndarray, values: np.ndarray, t: np.ndarray, horizon: float) -> float:
    """Largest coefficient spread keeping the worst 3-sigma draw nonnegative at the minimum.

    ``values`` is the full (offset) boundary function on grid ``t``; the
    first grid argmin is used.
    """
    idx = int(np.argmin(values))
    terms = np.asarray(coeffs) * fourier_basis(len(coeffs), np.array([t[idx]]), horizon)[:, 0]
    denom = 3.0 * float(np.sum(np.abs(terms)))  # sum over I+ minus sum over I-
    if denom == 0.0:
        return math.inf
    return max(float(values[idx]), 0.0) / denom


def evaluated_load_distribution(model: FourierBoundaryModel, times) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian law of ``(b_k(tau_k))_k`` for per-node evaluation times."""
    times = np.asarray(times, dtype=float)
    if times.shape != (model.n_nodes,):
        raise DimensionMismatch("need one evaluation time per node")
    w = np.stack([model.coeffs[k] * fourier_basis(model.n_terms, times[k:k + 1], model.horizon)[:, 0]
                  for k in range(model.n_nodes)])
    mean = model.offsets + w.sum(axis=1)
    cov = model.coefficient_cov() * (w @ w.T)
    return mean, cov
