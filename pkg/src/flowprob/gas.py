"""Stationary pressures on gas networks.

Pressures are handled in squared form ``pi = p**2``.  Along a pipe carrying
flow ``q`` from its parent side, ``pi_child = pi_parent - phi * q * |q|``;
a compressor scales ``pi`` by its factor and an open valve passes it on.

Single-supply trees are evaluated in closed form by one sweep in BFS order.
Forests with several supplies per component are solved for the unknown
injections at the non-root supplies by a batched, damped Newton iteration.
Flows follow from subtree sums, so Kirchhoff balance holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeSquaredPressure, NewtonDivergence, TopologyError
from .network import IncidenceMatrix, Network, SpanningTree, component_trees


def pressure_loss_g(inc: IncidenceMatrix, phi: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pressure loss from the root, ``(A^T)^-1 Phi (q o |q|)`` with ``q = A^-1 b``.

    ``phi`` is ordered like ``inc.edge_order`` and ``b`` like the demand nodes of
    ``inc.node_order``.  A leading batch axis on ``b`` is allowed.
    """
    b = np.asarray(b, dtype=float)
    n = inc.inverse.shape[0]
    phi = np.asarray(phi, dtype=float)
    if b.shape[-1] != n or phi.shape != (n,):
        raise DimensionMismatch(f"expected {n} loads and {n} friction values")
    inv = inc.inverse.astype(float)
    q = b @ inv.T
    return (phi * q * np.abs(q)) @ inv


@dataclass(frozen=True)
class SteadyState:
    flows: np.ndarray  # per network edge, positive in stored direction; 0 on closed valves
    pressures: np.ndarray
    squared: np.ndarray

    def kirchhoff_residual(self, net: Network, injections: np.ndarray) -> float:
        """Max nodal imbalance; ``injections`` are net inflows (supply > 0)."""
        bal = np.array(injections, dtype=float)
        for e, qe in zip(net.edges, self.flows):
            bal[e.source] -= qe
            bal[e.target] += qe
        return float(np.max(np.abs(bal)))


class SteadySolver:
    """Batched stationary solver for a network with loads on ``load_nodes``.

    ``squared_pressures(B)`` maps a load matrix ``(N, len(load_nodes))`` to
    ``(N, n_nodes)`` squared pressures.  Values below zero are returned as is;
    callers decide whether that means infeasible or an error.
    """

    def __init__(self, net: Network, load_nodes, max_iter: int = 100, tol: float = 1e-10):
        net.validate()
        self.net = net
        self.load_nodes = list(load_nodes)
        supplies = set(net.supplies)
        if supplies.intersection(self.load_nodes):
            raise TopologyError("loads cannot be placed on supply nodes")
        self.trees: list[SpanningTree] = component_trees(net)
        self.max_iter = max_iter
        self.tol = tol
        self._phi = net.phi
        self._col = {v: j for j, v in enumerate(self.load_nodes)}
        self._free = []  # per tree: non-root supplies
        for tree in self.trees:
            self._free.append([s for s in tree.order if s in supplies and s != tree.root])

    @property
    def single_supply(self) -> bool:
        return all(not f for f in self._free)

    def _edge_factor(self, tree: SpanningTree, v: int) -> tuple[str, float, float]:
        e = self.net.edges[tree.parent_edge[v]]
        if e.kind == "compressor":
            k = self.net.compressor_factor(e)
            return "comp", (k if tree.forward[v] else 1.0 / k), 0.0
        if e.kind == "valve":
            return "comp", 1.0, 0.0
        return "pipe", 1.0, self._phi[tree.parent_edge[v]]

    def _sweep(self, tree: SpanningTree, loads: np.ndarray, inject: dict[int, np.ndarray],
               deriv: list[int] | None = None):
        """One tree sweep. Returns (pi per node, q per child node, dpi/dy per node)."""
        n_samp = loads.shape[0]
        net_load = {v: np.zeros(n_samp) for v in tree.order}
        for v in tree.order:
            if v in self._col:
                net_load[v] = loads[:, self._col[v]]
            elif v in inject:
                net_load[v] = -inject[v]
        sub = {}
        for v in reversed(tree.order):
            acc = net_load[v].copy()
            for c in tree.children[v]:
                acc += sub[c]
            sub[v] = acc
        root_p0 = self.net.nodes[tree.root].p0
        pi = {tree.root: np.full(n_samp, root_p0**2)}
        k = len(deriv) if deriv else 0
        dpi = {tree.root: np.zeros((n_samp, k))}
        # dq_v/dy_s = -1 when supply s sits in the subtree of v
        in_sub = {}
        if deriv:
            for v in tree.order[1:]:
                members = set(tree.subtree(v))
                in_sub[v] = np.array([-1.0 if s in members else 0.0 for s in deriv])
        for v in tree.order[1:]:
            p = tree.parent[v]
            kind, fac, phi = self._edge_factor(tree, v)
            q = sub[v]
            if kind == "pipe":
                pi[v] = pi[p] - phi * q * np.abs(q)
                if deriv:
                    dpi[v] = dpi[p] - 2.0 * phi * np.abs(q)[:, None] * in_sub[v][None, :]
            else:
                pi[v] = fac * pi[p]
                if deriv:
                    dpi[v] = fac * dpi[p]
        return pi, sub, dpi

    def _solve_tree(self, tree: SpanningTree, free: list[int], loads: np.ndarray):
        n_samp = loads.shape[0]
        if not free:
            pi, sub, _ = self._sweep(tree, loads, {})
            return pi, sub, {}
        # initial guess: spread the component's total demand evenly across supplies
        comp_cols = [self._col[v] for v in tree.order if v in self._col]
        total = loads[:, comp_cols].sum(axis=1) if comp_cols else np.zeros(n_samp)
        y = np.tile((total / (len(free) + 1))[:, None], (1, len(free)))
        target = np.array([self.net.nodes[s].p0 ** 2 for s in free])

        def residual(yv):
            inj = {s: yv[:, j] for j, s in enumerate(free)}
            pi, sub, dpi = self._sweep(tree, loads, inj, deriv=free)
            res = np.stack([pi[s] for s in free], axis=1) - target
            jac = np.stack([dpi[s] for s in free], axis=1)
            return res, jac, pi, sub

        res, jac, pi, sub = residual(y)
        scale = max(1.0, float(np.max(target)))
        for _ in range(self.max_iter):
            norm = np.max(np.abs(res), axis=1)
            active = norm > self.tol * scale
            if not active.any():
                inj = {s: y[:, j] for j, s in enumerate(free)}
                return pi, sub, inj
            try:
                step = np.linalg.solve(jac, -res[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = -(np.linalg.pinv(jac) @ res[..., None])[..., 0]
            step[~active] = 0.0
            lam = np.ones(n_samp)
            for _ls in range(30):
                y_try = y + lam[:, None] * step
                r_try, j_try, pi_t, sub_t = residual(y_try)
                better = np.max(np.abs(r_try), axis=1) < (1 - 1e-4 * lam) * norm
                ok = better | ~active
                if ok.all():
                    break
                lam = np.where(ok, lam, lam * 0.5)
            y, res, jac, pi, sub = y_try, r_try, j_try, pi_t, sub_t
        raise NewtonDivergence(f"multi-supply solve did not converge in {self.max_iter} iterations")

    def solve_batch(self, loads: np.ndarray):
        """Return (squared pressures (N, n_nodes), edge flows (N, n_edges), injections)."""
        loads = np.atleast_2d(np.asarray(loads, dtype=float))
        if loads.shape[1] != len(self.load_nodes):
            raise DimensionMismatch(f"expected {len(self.load_nodes)} loads per sample, got {loads.shape[1]}")
        n_samp = loads.shape[0]
        pi_all = np.zeros((n_samp, self.net.n_nodes))
        flows = np.zeros((n_samp, len(self.net.edges)))
        injections = {}
        for tree, free in zip(self.trees, self._free):
            pi, sub, inj = self._solve_tree(tree, free, loads)
            injections.update(inj)
            for v, val in pi.items():
                pi_all[:, v] = val
            for v in tree.order[1:]:
                sign = 1.0 if tree.forward[v] else -1.0
                flows[:, tree.parent_edge[v]] = sign * sub[v]
        return pi_all, flows, injections

    def squared_pressures(self, loads: np.ndarray) -> np.ndarray:
        return self.solve_batch(loads)[0]

    def solve(self, loads, strict: bool = True) -> SteadyState:
        pi, flows, _ = self.solve_batch(np.asarray(loads, dtype=float)[None, :])
        pi, flows = pi[0], flows[0]
        if strict and np.any(pi < 0):
            raise NegativeSquaredPressure(f"negative squared pressure at nodes {np.flatnonzero(pi < 0).tolist()}")
        return SteadyState(flows, np.sqrt(np.maximum(pi, 0.0)), pi)

    def inlet_sensitivity(self) -> np.ndarray:
        """``alpha_k`` with ``d pi_k / d (p0^2) = alpha_k`` on single-supply trees."""
        if not self.single_supply:
            raise TopologyError("inlet sensitivity is defined for single-supply networks")
        out = np.zeros(self.net.n_nodes)
        for tree in self.trees:
            fac = {tree.root: 1.0}
            for v in tree.order[1:]:
                kind, f, _ = self._edge_factor(tree, v)
                fac[v] = fac[tree.parent[v]] * (f if kind == "comp" else 1.0)
            for v, val in fac.items():
                out[v] = val
        return out


def node_pressures(net: Network, b, load_nodes=None, strict: bool = True) -> SteadyState:
    """Steady state for a single load vector.

    ``load_nodes`` defaults to the bounded demand nodes.
    """
    load_nodes = net.bounded_nodes if load_nodes is None else load_nodes
    return SteadySolver(net, load_nodes).solve(b, strict=strict)


def feasible_mask(net: Network, solver: SteadySolver, loads: np.ndarray,
                  lower=None, upper=None) -> np.ndarray:
    """Vectorized feasibility of load samples against the bounded-node box."""
    loads = np.atleast_2d(np.asarray(loads, dtype=float))
    nodes = net.bounded_nodes
    lower = net.lower_bounds() if lower is None else np.asarray(lower, dtype=float)
    upper = net.upper_bounds() if upper is None else np.asarray(upper, dtype=float)
    pi = solver.squared_pressures(loads)
    ok = np.all(loads >= 0, axis=1) & np.all(pi >= 0, axis=1)
    sq = pi[:, nodes]
    # compare in squared form; bounds are nonnegative pressures
    ok &= np.all(sq >= np.sign(lower) * lower**2, axis=1) & np.all(sq <= upper**2, axis=1)
    return ok


def feasibility_check(net: Network, b, load_nodes=None) -> bool:
    load_nodes = net.bounded_nodes if load_nodes is None else load_nodes
    solver = SteadySolver(net, load_nodes)
    try:
        return bool(feasible_mask(net, solver, np.asarray(b, dtype=float)[None, :])[0])
    except (NegativeSquaredPressure, NewtonDivergence):
        return False


def lemma_feasible(p0: float, g: np.ndarray, pmin: np.ndarray, pmax: np.ndarray, b: np.ndarray) -> bool:
    """Closed-form tree test: ``pmin^2 + g <= p0^2 <= pmax^2 + g`` and ``b >= 0``."""
    b, g = np.asarray(b), np.asarray(g)
    return bool(np.all(b >= 0) and np.all(p0**2 <= pmax**2 + g) and np.all(p0**2 >= pmin**2 + g))


@dataclass(frozen=True)
class TreeQuadraticForm:
    """``pi_k = alpha_k p0^2 - sum_e W[e, k] phi_e q_e^2`` with ``q = Q b``.

    Valid for nonnegative loads on a single-supply tree, where every edge
    flow points away from the supply.  Rows of ``Q``/``W`` run over pipe
    edges, columns of ``W`` over ``nodes``.
    """

    p0: float
    alpha: np.ndarray
    phi: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    nodes: tuple[int, ...]

    def squared_pressures(self, b: np.ndarray, p0: float | None = None) -> np.ndarray:
        p0 = self.p0 if p0 is None else p0
        q = np.asarray(b, dtype=float) @ self.Q.T
        return self.alpha * p0**2 - (self.phi * q * np.abs(q)) @ self.W


def quadratic_form(net: Network, load_nodes, nodes=None) -> TreeQuadraticForm:
    solver = SteadySolver(net, load_nodes)
    if not solver.single_supply or len(solver.trees) != 1:
        raise TopologyError("closed-form feasibility needs a single-supply tree")
    tree = solver.trees[0]
    nodes = tuple(net.bounded_nodes if nodes is None else nodes)
    load_nodes = list(load_nodes)
    pipes = []
    for v in tree.order[1:]:
        kind, _, phi = solver._edge_factor(tree, v)
        if kind == "pipe":
            pipes.append((v, phi))
    W = np.zeros((len(pipes), len(nodes)))
    Q = np.zeros((len(pipes), len(load_nodes)))
    alpha = np.ones(len(nodes))
    row = {v: i for i, (v, _) in enumerate(pipes)}
    for k, target in enumerate(nodes):
        path = [target]
        while path[-1] != tree.root:
            path.append(tree.parent[path[-1]])
        acc = 1.0  # product of compressor factors between the current edge and the target
        for v in path[:-1]:
            kind, fac, _ = solver._edge_factor(tree, v)
            if kind == "pipe":
                W[row[v], k] = acc
            else:
                acc *= fac
        alpha[k] = acc
    for i, (v, _) in enumerate(pipes):
        members = set(tree.subtree(v))
        for j, w in enumerate(load_nodes):
            if w in members:
                Q[i, j] = 1.0
    return TreeQuadraticForm(net.nodes[tree.root].p0, alpha, np.array([p for _, p in pipes]), W, Q, nodes)
