"""Chance-constrained bound optimization on a frozen sample set.

All problems share the form

    min c^T x   s.t.   g(x) = alpha - P_N(x) <= 0,   x >= lower,

where ``P_N`` is a KDE box probability and ``x`` is a vector of upper bounds
(pressures or contamination levels) or the scalar supply pressure.  The
solver runs a feasibility phase, a log-barrier homotopy and finally a Newton
iteration on the KKT system ``c - mu grad P = 0, P = alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import InfeasibleAlpha, LineSearchStall
from .gas import SteadySolver, TreeQuadraticForm
from .kde import (KdeModel, MinMaxKde, box_probability, grad_box_probability_upper, grad_minmax_probability,
                  grad_probability_inlet, minmax_box_probability)
from .montecarlo import ProbabilityEstimate
from .network import Network

BARRIER_STAGES = 5
BARRIER_SHRINK = 0.1
MAX_STAGE_ITER = 500
STEP_TOL = 1e-9
KKT_TOL = 1e-6


class ChanceConstraint(Protocol):
    dim: int

    def prob(self, x: np.ndarray) -> float: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...


@dataclass
class BoxConstraint:
    """``P_N`` of the box ``[lower, x]`` under a KDE of observation samples."""

    model: KdeModel
    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.model.dim

    def prob(self, x):
        return box_probability(self.model, self.lower, x).value

    def grad(self, x):
        return grad_box_probability_upper(self.model, self.lower, x)


@dataclass
class MinMaxConstraint:
    """``P_N`` that every trace stays in ``[lower, x]`` over the horizon."""

    model: MinMaxKde
    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.model.dim

    def prob(self, x):
        return minmax_box_probability(self.model, self.lower, x).value

    def grad(self, x):
        return grad_minmax_probability(self.model, self.lower, x)


@dataclass
class InletConstraint:
    """``P_N`` as a function of the supply pressure on a single-supply tree.

    Pressures are recomputed from the stored load draws for every candidate
    ``p0``; bandwidths are fitted once at ``p_ref`` and then held fixed so that
    the probability stays a smooth function of ``p0``.
    """

    form: TreeQuadraticForm
    loads: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p_ref: float
    rule: str = "per_axis"
    h: np.ndarray = field(init=False)
    dim: int = 1

    def __post_init__(self):
        self._loss = self.form.alpha * self.form.p0**2 - self.form.squared_pressures(self.loads)
        self.h = KdeModel.fit(*self._samples(self.p_ref), rule=self.rule).h

    def _samples(self, p0: float):
        pi = self.form.alpha * p0**2 - self._loss
        valid = np.all(pi > 0, axis=1) & np.all(self.loads >= 0, axis=1)
        return np.sqrt(np.where(valid[:, None], pi, 1.0)), valid

    def model(self, p0: float) -> KdeModel:
        x, valid = self._samples(p0)
        return KdeModel(np.where(valid[:, None], x, 0.0), self.h, valid)

    def prob(self, x):
        return box_probability(self.model(float(x[0])), self.lower, self.upper).value

    def grad(self, x):
        p0 = float(x[0])
        return np.array([grad_probability_inlet(self.model(p0), self.lower, self.upper, p0, self.form.alpha)])


@dataclass
class OptimizationProblem:
    kind: str  # upper_pressure_bounds | inlet_pressure | upper_contamination_bounds
    constraint: ChanceConstraint
    alpha: float
    lower: np.ndarray
    start: np.ndarray
    cost: np.ndarray | None = None
    excluded: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.lower = np.asarray(self.lower, dtype=float)
        self.start = np.maximum(np.asarray(self.start, dtype=float), self.lower)
        self.cost = np.ones(self.constraint.dim) if self.cost is None else np.asarray(self.cost, dtype=float)


@dataclass(frozen=True)
class KktPoint:
    x: np.ndarray
    mu: float
    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)

    def as_dict(self) -> dict:
        return {"x": self.x.tolist(), "mu": self.mu, "stationarity": self.stationarity,
                "feasibility": self.feasibility, "complementarity": self.complementarity}


@dataclass(frozen=True)
class ChanceResult:
    x: np.ndarray
    kkt: KktPoint
    estimate: ProbabilityEstimate
    objective: float
    excluded: int
    iterations: int


def kkt_residuals(problem: OptimizationProblem, x, mu: float) -> KktPoint:
    x = np.asarray(x, dtype=float)
    g = problem.alpha - problem.constraint.prob(x)
    grad_g = -problem.constraint.grad(x)
    stat = problem.cost + mu * grad_g
    # bound-active coordinates may carry a positive reduced cost
    at_lower = x <= problem.lower + 1e-12
    stat = np.where(at_lower, np.minimum(stat, 0.0), stat)
    return KktPoint(x.copy(), float(mu), float(np.max(np.abs(stat))), float(max(g, 0.0)), float(abs(mu * g)))


def _hessian(constraint: ChanceConstraint, x: np.ndarray) -> np.ndarray:
    """Central differences of the analytic gradient."""
    n = x.size
    H = np.zeros((n, n))
    for j in range(n):
        step = 1e-5 * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = step
        H[:, j] = (constraint.grad(x + e) - constraint.grad(x - e)) / (2 * step)
    return 0.5 * (H + H.T)


def _phase_one(problem: OptimizationProblem, margin: float) -> np.ndarray:
    """Walk from the start along ``+1`` until ``P_N`` exceeds ``alpha`` with some margin."""
    con, x0 = problem.constraint, problem.start
    p = con.prob(x0)
    if p > problem.alpha + margin:
        return x0
    scale = max(1e-3, 1e-2 * float(np.max(np.abs(x0)))) if x0.size else 1.0
    best_x, best_p = x0, p
    t = scale
    for _ in range(60):
        x = x0 + t
        p = con.prob(x)
        if p > best_p:
            best_x, best_p = x, p
        if p > problem.alpha + margin:
            return x
        t *= 1.5
    if best_p > problem.alpha:
        return best_x
    raise InfeasibleAlpha(f"probability level {problem.alpha} not attained (best {best_p:.4f})")


def _barrier(problem: OptimizationProblem, x: np.ndarray, weight: float) -> tuple[np.ndarray, int]:
    """Minimize ``c.x - w log(P(x) - alpha)`` over ``x >= lower`` by projected Newton steps."""
    con, c, lo, alpha = problem.constraint, problem.cost, problem.lower, problem.alpha

    def value(z):
        slack = con.prob(z) - alpha
        return math.inf if slack <= 0 else float(c @ z) - weight * math.log(slack)

    fx = value(x)
    it = 0
    for it in range(1, MAX_STAGE_ITER + 1):
        slack = con.prob(x) - alpha
        gp = con.grad(x)
        grad = c - weight * gp / slack
        H = -weight * (_hessian(con, x) / slack - np.outer(gp, gp) / slack**2)
        free = ~((x <= lo + 1e-12) & (grad > 0))
        direction = -grad.copy()
        if free.any():
            Hf = H[np.ix_(free, free)]
            try:
                w = np.linalg.eigvalsh(Hf)
                if w.min() > 1e-12 * max(1.0, w.max()):
                    direction[free] = -np.linalg.solve(Hf, grad[free])
            except np.linalg.LinAlgError:
                pass
        direction[~free] = 0.0
        if float(grad @ direction) >= 0:
            direction = np.where(free, -grad, 0.0)
        step, moved = 1.0, False
        for _ in range(60):
            z = np.maximum(x + step * direction, lo)
            fz = value(z)
            if fz <= fx + 1e-4 * float(grad @ (z - x)):
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        delta = float(np.max(np.abs(z - x)))
        x, fx = z, fz
        if delta < STEP_TOL:
            break
    return x, it


def _kkt_newton(problem: OptimizationProblem, x: np.ndarray, mu: float, max_iter: int = 50):
    """Newton on ``c - mu grad P = 0, P - alpha = 0`` with a residual line search."""
    con, c, alpha = problem.constraint, problem.cost, problem.alpha

    def residual(z, m):
        return np.concatenate([c - m * con.grad(z), [con.prob(z) - alpha]])

    r = residual(x, mu)
    n = x.size
    for _ in range(max_iter):
        if np.max(np.abs(r)) < 1e-12:
            break
        gp = con.grad(x)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = -mu * _hessian(con, x)
        J[:n, n] = -gp
        J[n, :n] = gp
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = -np.linalg.pinv(J) @ r
        t, norm0 = 1.0, float(np.linalg.norm(r))
        for _ in range(40):
            z, m = x + t * step[:n], mu + t * step[n]
            rz = residual(z, m)
            if np.linalg.norm(rz) < (1 - 1e-4 * t) * norm0:
                break
            t *= 0.5
        else:
            raise LineSearchStall("KKT Newton line search made no progress")
        x, mu, r = z, m, rz
    return x, mu


def solve_chance(problem: OptimizationProblem, barrier_weight: float | None = None,
                 polish: bool = True) -> ChanceResult:
    con, alpha, lo = problem.constraint, problem.alpha, problem.lower
    p_lo = con.prob(lo)
    if p_lo >= alpha and problem.kind != "inlet_pressure" and np.all(problem.cost > 0):
        # the constraint is slack at the cheapest admissible point
        kkt = kkt_residuals(problem, lo, 0.0)
        return ChanceResult(lo.copy(), kkt, ProbabilityEstimate(p_lo, "kde", _count(con)),
                            float(problem.cost @ lo), problem.excluded, 0)
    x = _phase_one(problem, margin=min(0.02, 0.5 * (1 - alpha)))
    gp = con.grad(x)
    slack = con.prob(x) - alpha
    if barrier_weight is None:
        # balance the two terms of the barrier gradient at the start
        barrier_weight = float(np.linalg.norm(problem.cost) * slack / max(np.linalg.norm(gp), 1e-12))
    weight, iters = barrier_weight, 0
    for _ in range(BARRIER_STAGES):
        x, k = _barrier(problem, x, weight)
        iters += k
        weight *= BARRIER_SHRINK
    gp = con.grad(x)
    mu = float(problem.cost @ gp / max(gp @ gp, 1e-300))
    if polish and np.all(x > lo + 1e-9):
        try:
            xn, mn = _kkt_newton(problem, x, mu)
            if np.all(xn >= lo) and mn >= 0:
                x, mu = xn, mn
        except LineSearchStall:
            pass
    kkt = kkt_residuals(problem, x, mu)
    est = ProbabilityEstimate(con.prob(x), "kde", _count(con))
    return ChanceResult(x, kkt, est, float(problem.cost @ x), problem.excluded, iters)


def solve_kkt(problem: OptimizationProblem, x0, mu0: float | None = None) -> KktPoint:
    """Solve the KKT system directly by Newton's method from ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    if mu0 is None:
        gp = problem.constraint.grad(x0)
        mu0 = float(problem.cost @ gp / max(gp @ gp, 1e-300))
    x, mu = _kkt_newton(problem, x0, mu0)
    return kkt_residuals(problem, x, mu)


def _count(con) -> int:
    model = getattr(con, "model", None)
    if callable(model):
        return con.loads.shape[0]
    return model.n


# -- deterministic problems ------------------------------------------------------

def solve_deterministic_gas(net: Network, load_nodes, mean) -> np.ndarray:
    """Smallest upper pressure bounds admitting the mean load: the pressures themselves."""
    solver = SteadySolver(net, load_nodes)
    state = solver.solve(np.asarray(mean, dtype=float))
    return state.pressures[net.bounded_nodes]


def solve_deterministic_inlet(form: TreeQuadraticForm, mean, lower) -> float:
    """Smallest supply pressure keeping every bounded node above its lower bound at the mean load."""
    loss = form.alpha * form.p0**2 - form.squared_pressures(np.asarray(mean, dtype=float)[None, :])[0]
    lower = np.asarray(lower, dtype=float)
    return float(np.max(np.sqrt((np.maximum(lower, 0.0) ** 2 + loss) / form.alpha)))


def solve_deterministic_traces(traces: np.ndarray) -> np.ndarray:
    """Smallest upper contamination bounds: the maxima of the deterministic traces."""
    return np.max(np.atleast_2d(traces), axis=-1)


# -- inlet pressure ----------------------------------------------------------------

def solve_inlet_pressure(constraint: InletConstraint, alpha: float, p_lower: float,
                         start: float | None = None) -> ChanceResult:
    start = p_lower if start is None else max(start, p_lower)
    problem = OptimizationProblem("inlet_pressure", constraint, alpha, np.array([p_lower]), np.array([start]))
    return solve_chance(problem)


def bisect_level(fun: Callable[[float], float], alpha: float, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Smallest ``t`` in ``[lo, hi]`` with ``fun(t) >= alpha`` for ``fun`` increasing there."""
    if fun(lo) >= alpha:
        return lo
    if fun(hi) < alpha:
        raise InfeasibleAlpha("level not reached on the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fun(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    return hi
