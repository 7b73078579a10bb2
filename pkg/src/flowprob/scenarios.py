"""Scenario documents: a network plus load model, bounds and a probability level.

Two kinds exist.  ``stationary`` scenarios hold a gas network, a Gaussian
load model on its demand nodes and pressure bounds on the bounded nodes.
``transport`` scenarios hold a contamination network, randomized Fourier
boundary data at the sources and bounds on the observed node traces.

An upper bound given as ``"deterministic"`` is replaced by the solution of
the deterministic problem at the mean data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .boundary import FourierBoundaryModel, GaussianLoadModel, parse_expression, sample_loads, sphere_sample
from .errors import FlowProbError, SchemaError, TopologyError
from .gas import SteadySolver, feasible_mask, quadratic_form
from .kde import KdeModel, MinMaxKde, box_probability, minmax_box_probability
from .montecarlo import ProbabilityEstimate, mc_probability
from .network import Network, network_from_dict
from .optimize import (BoxConstraint, ChanceResult, InletConstraint, MinMaxConstraint, OptimizationProblem,
                       solve_chance, solve_deterministic_gas, solve_deterministic_inlet,
                       solve_deterministic_traces, solve_inlet_pressure)
from .srd import boundary_grid_check, dynamic_srd_probability, fixed_time_law, srd_probability
from .transport import TransportEdge, TransportTree, min_max_trace, time_grid

BUILTIN = ("example1", "example2", "example3", "gaslib11", "water")
SPHERE_SCHEME = "orthonormal"


class CapabilityError(FlowProbError):
    """The requested estimator does not apply to this scenario."""


def _vector(raw, n: int, what: str) -> np.ndarray:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return np.full(n, float(raw))
    if not isinstance(raw, list) or len(raw) != n:
        raise SchemaError(f"{what} must be a number or a list of {n} numbers")
    return np.array([math.inf if v is None else float(v) for v in raw])


@dataclass
class StationaryScenario:
    name: str
    net: Network
    load_nodes: list[int]
    loads: GaussianLoadModel
    alpha: float
    upper_spec: Any = None
    _solver: SteadySolver | None = field(default=None, repr=False)

    kind = "stationary"

    @property
    def observe(self) -> list[int]:
        return self.net.bounded_nodes

    @property
    def solver(self) -> SteadySolver:
        if self._solver is None:
            self._solver = SteadySolver(self.net, self.load_nodes)
        return self._solver

    @property
    def lower(self) -> np.ndarray:
        return self.net.lower_bounds()

    @property
    def upper(self) -> np.ndarray:
        if self.upper_spec == "deterministic":
            return self.deterministic()
        return self.net.upper_bounds()

    @property
    def srd_capable(self) -> bool:
        return len(self.net.supplies) == 1

    def deterministic(self) -> np.ndarray:
        return solve_deterministic_gas(self.net, self.load_nodes, self.loads.mean)

    def samples(self, n_samples: int, seed: int):
        """Load draws, pressures at the bounded nodes and the validity mask."""
        b = sample_loads(self.loads, n_samples, seed)
        pi = self.solver.squared_pressures(b)[:, self.observe]
        valid = np.all(b >= 0, axis=1) & np.all(pi >= 0, axis=1)
        return b, np.sqrt(np.maximum(pi, 0.0)), valid

    def estimate(self, method: str, n_samples: int, seed: int, upper=None) -> ProbabilityEstimate:
        upper = self.upper if upper is None else np.asarray(upper, dtype=float)
        if method == "srd":
            if not self.srd_capable:
                raise CapabilityError("SRD needs the closed-form feasible set of a single-supply tree; "
                                      "use kde or mc for this network")
            form = quadratic_form(self.net, self.load_nodes)
            dirs = sphere_sample(self.loads.dim, n_samples, seed, SPHERE_SCHEME)
            est = srd_probability(form, self.loads, self.lower, upper, dirs, seed)
            return ProbabilityEstimate(est.value, "srd", n_samples, None, seed)
        b, p, valid = self.samples(n_samples, seed)
        if method == "kde":
            est = box_probability(KdeModel.fit(p, valid), self.lower, upper)
            return ProbabilityEstimate(est.value, "kde", n_samples, None, seed)
        if method == "mc":
            ok = feasible_mask(self.net, self.solver, b, self.lower, upper)
            return mc_probability(ok, seed=seed)
        raise ValueError(f"unknown method {method!r}")

    def problem(self, n_samples: int, seed: int, alpha: float | None = None) -> OptimizationProblem:
        _, p, valid = self.samples(n_samples, seed)
        con = BoxConstraint(KdeModel.fit(p, valid), self.lower)
        return OptimizationProblem("upper_pressure_bounds", con, self.alpha if alpha is None else alpha,
                                   self.lower, self.deterministic(), excluded=int(np.count_nonzero(~valid)))

    def optimize(self, n_samples: int, seed: int, alpha: float | None = None) -> ChanceResult:
        return solve_chance(self.problem(n_samples, seed, alpha))

    def inlet_constraint(self, n_samples: int, seed: int) -> tuple[InletConstraint, float]:
        """Inlet-pressure chance constraint and the deterministic supply pressure."""
        if not self.srd_capable:
            raise CapabilityError("inlet pressure optimization needs a single-supply network")
        form = quadratic_form(self.net, self.load_nodes)
        p_det = solve_deterministic_inlet(form, self.loads.mean, self.lower)
        b = sample_loads(self.loads, n_samples, seed)
        return InletConstraint(form, b, self.lower, self.upper, p_det), p_det

    def optimize_inlet(self, n_samples: int, seed: int, alpha: float | None = None) -> ChanceResult:
        con, p_det = self.inlet_constraint(n_samples, seed)
        return solve_inlet_pressure(con, self.alpha if alpha is None else alpha, float(np.max(self.lower)), p_det)


@dataclass
class TransportScenario:
    name: str
    tree: TransportTree
    model: FourierBoundaryModel
    observe: list[int]
    lower: np.ndarray
    upper_spec: Any
    alpha: float
    grid_points: int = 101
    t_start: float = 0.0
    exact: tuple = ()

    kind = "transport"
    srd_capable = False

    @property
    def horizon(self) -> float:
        return self.model.horizon

    @property
    def grid(self) -> np.ndarray:
        return time_grid(self.horizon, self.grid_points)

    @property
    def upper(self) -> np.ndarray:
        if isinstance(self.upper_spec, str):
            return self.deterministic()
        return np.asarray(self.upper_spec, dtype=float)

    def _boundary(self, draws):
        index = {v: k for k, v in enumerate(self.model.nodes)}
        return lambda v, t: self.model.evaluate(draws, t, index[v])

    def deterministic_traces(self) -> np.ndarray:
        """Traces of the exact boundary functions on the grid, shape ``(n_observe, points)``."""
        funcs = dict(zip(self.model.nodes, self.exact))

        def bnd(v, t):
            return np.broadcast_to(np.asarray(funcs[v](t), dtype=float), t.shape)[None, :]

        return np.stack([self.tree.node_trace(v, self.grid, bnd, 1)[0] for v in self.observe])

    def deterministic(self) -> np.ndarray:
        t = self.grid
        traces = self.deterministic_traces()
        return solve_deterministic_traces(traces[:, t >= self.t_start - 1e-12])

    def traces(self, n_samples: int, seed: int) -> np.ndarray:
        draws = self.model.draw_coefficients(n_samples, seed)
        bnd = self._boundary(draws)
        return np.stack([self.tree.node_trace(v, self.grid, bnd, n_samples) for v in self.observe], axis=1)

    def min_max(self, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        tr = self.traces(n_samples, seed)
        lo, hi = min_max_trace(tr, self.grid, self.t_start)
        return lo, hi

    def estimate(self, method: str, n_samples: int, seed: int, upper=None,
                 t_star: float | None = None) -> ProbabilityEstimate:
        upper = self.upper if upper is None else np.asarray(upper, dtype=float)
        if t_star is not None:
            return self._estimate_fixed(method, n_samples, seed, upper, t_star)
        if method == "srd":
            raise CapabilityError("SRD over the whole horizon is not available for transport scenarios; "
                                  "give a fixed time (--t-star) or use kde or mc")
        mins, maxs = self.min_max(n_samples, seed)
        if method == "kde":
            est = minmax_box_probability(MinMaxKde.fit(mins, maxs), self.lower, upper)
            return ProbabilityEstimate(est.value, "kde", n_samples, None, seed)
        if method == "mc":
            ok = np.all((mins >= self.lower) & (maxs <= upper), axis=1)
            return mc_probability(ok, seed=seed)
        raise ValueError(f"unknown method {method!r}")

    def _estimate_fixed(self, method, n_samples, seed, upper, t_star):
        if not 0 <= t_star <= self.horizon:
            raise ValueError("t_star must lie in [0, T]")
        if method == "srd":
            law = fixed_time_law(self.tree, self.model, self.observe, t_star)
            dirs = sphere_sample(max(law.mean.size, 1), n_samples, seed, SPHERE_SCHEME)
            check = boundary_grid_check(self.model, law, self.grid)
            est = dynamic_srd_probability(law, self.lower, upper, dirs, check, seed)
            return ProbabilityEstimate(est.value, "srd", n_samples, None, seed)
        draws = self.model.draw_coefficients(n_samples, seed)
        bnd = self._boundary(draws)
        t = np.array([t_star])
        vals = np.stack([self.tree.node_trace(v, t, bnd, n_samples)[:, 0] for v in self.observe], axis=1)
        if method == "kde":
            est = box_probability(KdeModel.fit(vals), self.lower, upper)
            return ProbabilityEstimate(est.value, "kde", n_samples, None, seed)
        if method == "mc":
            return mc_probability(np.all((vals >= self.lower) & (vals <= upper), axis=1), seed=seed)
        raise ValueError(f"unknown method {method!r}")

    def problem(self, n_samples: int, seed: int, alpha: float | None = None) -> OptimizationProblem:
        mins, maxs = self.min_max(n_samples, seed)
        con = MinMaxConstraint(MinMaxKde.fit(mins, maxs), self.lower)
        return OptimizationProblem("upper_contamination_bounds", con, self.alpha if alpha is None else alpha,
                                   self.lower, self.deterministic())

    def optimize(self, n_samples: int, seed: int, alpha: float | None = None) -> ChanceResult:
        return solve_chance(self.problem(n_samples, seed, alpha))


def _stationary(doc: dict) -> StationaryScenario:
    net = network_from_dict(doc["network"])
    loads = doc.get("loads")
    if not isinstance(loads, dict) or "mean" not in loads:
        raise SchemaError("stationary scenario needs 'loads' with a 'mean'")
    nodes = loads.get("nodes", net.bounded_nodes)
    if "cov" in loads:
        model = GaussianLoadModel.from_cov(loads["mean"], loads["cov"])
    elif "std" in loads:
        model = GaussianLoadModel.from_std(loads["mean"], loads["std"])
    else:
        raise SchemaError("loads need 'cov' or 'std'")
    if model.dim != len(nodes):
        raise SchemaError("load mean and load nodes differ in length")
    if not net.bounded_nodes:
        raise SchemaError("no bounded nodes to observe")
    return StationaryScenario(doc.get("name", "scenario"), net, list(nodes), model,
                              float(doc.get("alpha", 0.75)), doc.get("upper"))


def _transport(doc: dict) -> TransportScenario:
    try:
        horizon = float(doc["horizon"])
        raw_edges, raw_sources, obs = doc["edges"], doc["sources"], doc["observe"]
    except KeyError as exc:
        raise SchemaError(f"transport scenario is missing {exc}") from None
    edges, labels = [], {}
    for k, e in enumerate(raw_edges):
        try:
            edges.append(TransportEdge(int(e["from"]), int(e["to"]), float(e["d"]), float(e["m"]),
                                       float(e.get("length", 1.0)), str(e.get("id", f"e{k + 1}"))))
        except KeyError as exc:
            raise SchemaError(f"edge[{k}] is missing {exc}") from None
        labels[edges[-1].label] = k
    split = {}
    for label, frac in doc.get("split", {}).items():
        if label not in labels:
            raise SchemaError(f"split names unknown edge {label!r}")
        split[labels[label]] = float(frac)
    nodes, funcs, sigma = [], [], []
    for k, s in enumerate(raw_sources):
        nodes.append(int(s["node"]))
        funcs.append(parse_expression(s["function"]))
        if "sigma" in s:
            sigma.append(float(s["sigma"]))
        elif "sigma2" in s:
            sigma.append(math.sqrt(float(s["sigma2"])))
        else:
            raise SchemaError(f"source[{k}] needs 'sigma' or 'sigma2'")
    n_terms = int(doc.get("n_terms", 30))
    if n_terms < 1:
        raise SchemaError("n_terms must be positive")
    model = FourierBoundaryModel.from_functions(nodes, funcs, sigma, horizon, n_terms - 1)
    tree = TransportTree(edges, tuple(nodes), horizon, split)
    if doc.get("initial", "compatible") != "compatible":
        raise SchemaError("only 'compatible' initial data is supported")
    tree.compatible_initial({v: float(c) for v, c in zip(nodes, model.offsets)})
    observe = [int(v) for v in obs["nodes"]]
    for v in observe:
        if v not in tree.nodes:
            raise TopologyError(f"observed node {v} is not in the network")
    lower = _vector(obs.get("lower", 0.0), len(observe), "observe.lower")
    upper = obs.get("upper", "deterministic")
    if upper != "deterministic":
        upper = _vector(upper, len(observe), "observe.upper")
    return TransportScenario(doc.get("name", "scenario"), tree, model, observe, lower, upper,
                             float(doc.get("alpha", 0.75)), int(doc.get("grid_points", 101)),
                             float(doc.get("t_start", 0.0)), tuple(funcs))


def scenario_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be a JSON object")
    kind = doc.get("kind", "stationary")
    if kind == "stationary":
        return _stationary(doc)
    if kind == "transport":
        return _transport(doc)
    raise SchemaError(f"unknown scenario kind {kind!r}")


def load_scenario(name_or_path: str | Path):
    """Load a builtin scenario by name or a scenario file by path."""
    text = None
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        stem = path.stem if path.suffix == ".json" else str(name_or_path)
        if stem in BUILTIN:
            text = resources.files("flowprob").joinpath("data").joinpath(f"{stem}.json").read_text()
        elif path.exists():
            text = path.read_text()
    if text is None:
        raise FileNotFoundError(f"scenario {name_or_path!r} not found")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scenario is not valid JSON: {exc}") from None
    return scenario_from_dict(doc)
