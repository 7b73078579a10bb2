"""Linear transport with decay, ``r_t + d r_x = m r`` with ``d < 0``, on chains and trees.

On each edge the coordinate ``x = 0`` is the downstream end and ``x = L``
the upstream end, so information travels from ``x = L`` to ``x = 0`` at
speed ``|d|``.  The node value ``c_v(t)`` is the local injection ``b_v(t)``
plus everything arriving at ``v`` through incoming edges; an outgoing edge
receives ``split_e * c_v(t)`` at its upstream end.

``solve_chain`` evaluates the explicit closed form on a chain. ``TransportTree``
evaluates node traces on trees by the recursion

    r_e(t, 0) = exp(m tau) split_e c_u(t - tau)      if t >= tau = L/|d|
              = exp(m t) r_{e,0}(|d| t)              otherwise,

which is the sum over all source-to-node paths of the chain formula.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import CFLViolation, DimensionMismatch, EmptyWindow, OutOfDomain, SchemaError, TopologyError

TIME_TOL = 1e-12


@dataclass(frozen=True)
class ExpProfile:
    """Initial profile ``coef * exp(rate * (x - offset))``."""

    coef: float
    rate: float
    offset: float

    def __call__(self, x):
        return self.coef * np.exp(self.rate * (np.asarray(x, dtype=float) - self.offset))

    def derivative(self, x):
        return self.rate * self(x)


@dataclass(frozen=True)
class TransportEdge:
    source: int
    target: int
    d: float
    m: float
    length: float
    label: str = ""

    def __post_init__(self):
        if not self.d < 0:
            raise SchemaError(f"edge {self.label}: velocity d must be negative")
        if self.m > 0:
            raise SchemaError(f"edge {self.label}: decay rate m must be nonpositive")
        if not self.length > 0:
            raise SchemaError(f"edge {self.label}: length must be positive")

    @property
    def delay(self) -> float:
        return self.length / abs(self.d)


# -- chains -------------------------------------------------------------------

@dataclass(frozen=True)
class TransportChain:
    """Linear graph ``v_0 <- e_1 - v_1 <- ... <- e_n - v_n``.

    Lists are indexed by edge ``k = 1..n`` stored at position ``k - 1``.
    Edge ``k`` joins ``v_{k-1}`` (x = 0) and ``v_k`` (x = L_k).
    """

    d: tuple[float, ...]
    m: tuple[float, ...]
    lengths: tuple[float, ...]
    initial: tuple[Callable, ...]
    horizon: float

    def __post_init__(self):
        n = len(self.d)
        if not (len(self.m) == len(self.lengths) == len(self.initial) == n) or n == 0:
            raise DimensionMismatch("chain data must have one entry per edge")
        if any(dk >= 0 for dk in self.d):
            raise SchemaError("all velocities must be negative")

    @property
    def n(self) -> int:
        return len(self.d)

    def trace_constants(self) -> np.ndarray:
        """``C_i = exp(-sum_{j<=i} m_j L_j / d_j)``."""
        terms = np.array(self.m) * np.array(self.lengths) / np.array(self.d)
        return np.exp(-np.cumsum(terms))

    def initial_trace(self, ell: int, t: float) -> float:
        """``C_ell^0(t)``: contribution of edge ``ell``'s initial profile at ``v_0``."""
        d, m, L = self.d, self.m, self.lengths
        s = sum((m[ell - 1] - m[j]) * L[j] / d[j] for j in range(ell - 1))
        shift = sum(L[j] / d[j] for j in range(ell - 1))
        return math.exp(m[ell - 1] * t + s) * float(self.initial[ell - 1](-d[ell - 1] * t - d[ell - 1] * shift))

    def arrival_times(self) -> np.ndarray:
        """Cumulative travel time from ``v_i`` to ``v_0``."""
        return np.cumsum(np.array(self.lengths) / np.abs(np.array(self.d)))


def solve_chain(chain: TransportChain, boundaries: Sequence[Callable], t: float, x: float, k: int) -> float:
    """Closed-form concentration ``r_k(t, x)`` on a chain.

    ``boundaries[i - 1]`` is ``b_i`` injected at node ``v_i``.  At interface
    points the boundary branch is used.
    """
    n = chain.n
    if not 1 <= k <= n:
        raise OutOfDomain(f"edge index {k} outside 1..{n}")
    if not (0 <= t <= chain.horizon + TIME_TOL) or not (0 <= x <= chain.lengths[k - 1] + TIME_TOL):
        raise OutOfDomain(f"(t, x) = ({t}, {x}) outside the domain")
    if len(boundaries) != n:
        raise DimensionMismatch("need one boundary function per node v_1..v_n")
    d, m, L = chain.d, chain.m, chain.lengths
    dk, mk = d[k - 1], m[k - 1]

    def S(i):  # sum_{j=k}^{i} L_j / d_j
        return sum(L[j - 1] / d[j - 1] for j in range(k, i + 1))

    def Sm(i):
        return sum(m[j - 1] * L[j - 1] / d[j - 1] for j in range(k, i + 1))

    def boundary_sum(last):
        total = 0.0
        for i in range(k, last + 1):
            alpha = mk * x / dk - Sm(i)
            beta = t - x / dk + S(i)
            total += math.exp(alpha) * float(boundaries[i - 1](beta))
        return total

    if x >= dk * t + dk * S(n) - TIME_TOL:
        return boundary_sum(n)
    for ell in range(k, n + 1):
        lo = dk * t + dk * S(ell - 1)
        hi = dk * t + dk * S(ell)
        if lo - TIME_TOL <= x < hi:
            dl, ml = d[ell - 1], m[ell - 1]
            gamma = ml * t - (ml - mk) * x / dk + sum((ml - m[j - 1]) * L[j - 1] / d[j - 1] for j in range(k, ell))
            delta = -dl * t + dl * x / dk - dl * S(ell - 1)
            return boundary_sum(ell - 1) + math.exp(gamma) * float(chain.initial[ell - 1](delta))
    raise OutOfDomain("no characteristic branch matched")  # pragma: no cover


@dataclass
class UpwindResult:
    times: np.ndarray
    outlet: np.ndarray  # r_1(t, 0) per time step
    grids: list[np.ndarray]
    states: list[np.ndarray]  # final profiles per edge


def simulate_upwind(chain: TransportChain, boundaries: Sequence[Callable], dx: float,
                    dt: float | None = None, cfl: float = 0.5) -> UpwindResult:
    """First-order upwind scheme with exact decay per step.

    ``dt`` defaults to ``cfl * dx / max|d|``.
    """
    dmax = max(abs(v) for v in chain.d)
    if dt is None:
        dt = cfl * dx / dmax
    if dmax * dt / dx > 1 + 1e-12:
        raise CFLViolation(f"CFL number {dmax * dt / dx:.3f} exceeds 1")
    n_steps = int(round(chain.horizon / dt))
    dt = chain.horizon / n_steps
    grids, states = [], []
    for k in range(chain.n):
        cells = max(1, int(round(chain.lengths[k] / dx)))
        xs = np.linspace(0.0, chain.lengths[k], cells + 1)
        grids.append(xs)
        states.append(np.asarray(chain.initial[k](xs), dtype=float).copy())
    times = np.arange(n_steps + 1) * dt
    outlet = np.empty(n_steps + 1)
    outlet[0] = states[0][0]
    for step in range(1, n_steps + 1):
        t = times[step]
        new_states = [None] * chain.n
        for k in reversed(range(chain.n)):
            r = states[k]
            h = grids[k][1] - grids[k][0]
            nu = abs(chain.d[k]) * dt / h
            nxt = r.copy()
            nxt[:-1] = r[:-1] + nu * (r[1:] - r[:-1])
            nxt *= math.exp(chain.m[k] * dt)
            inflow = float(boundaries[k](t))
            if k + 1 < chain.n:
                inflow += new_states[k + 1][0]
            nxt[-1] = inflow
            new_states[k] = nxt
        states = new_states
        outlet[step] = states[0][0]
    return UpwindResult(times, outlet, grids, states)


# -- trees --------------------------------------------------------------------

BoundaryFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class TransportTree:
    """Transport network on a directed forest (edges point along the flow).

    ``split[e]`` is the share of the node value entering outgoing edge ``e``;
    it defaults to equal division.  ``initial[e]`` is an ``ExpProfile`` or
    callable in the edge coordinate.
    """

    edges: list[TransportEdge]
    sources: tuple[int, ...]
    horizon: float
    split: dict[int, float] = field(default_factory=dict)
    initial: dict[int, Callable] = field(default_factory=dict)

    def __post_init__(self):
        self.incoming: dict[int, list[int]] = defaultdict(list)
        self.outgoing: dict[int, list[int]] = defaultdict(list)
        for i, e in enumerate(self.edges):
            self.incoming[e.target].append(i)
            self.outgoing[e.source].append(i)
        nodes = {e.source for e in self.edges} | {e.target for e in self.edges}
        self.nodes = sorted(nodes)
        self._check_acyclic()
        for v, outs in list(self.outgoing.items()):
            if not outs:
                continue
            given = [self.split[i] for i in outs if i in self.split]
            if len(given) == len(outs):
                if abs(sum(given) - 1.0) > 1e-9:
                    raise TopologyError(f"split fractions at node {v} do not sum to 1")
            rest = [i for i in outs if i not in self.split]
            if rest:
                share = (1.0 - sum(given)) / len(rest)
                for i in rest:
                    self.split[i] = share

    def _check_acyclic(self):
        indeg = {v: len(self.incoming[v]) for v in self.nodes}
        ready = [v for v, deg in indeg.items() if deg == 0]
        seen = 0
        while ready:
            v = ready.pop()
            seen += 1
            for i in self.outgoing[v]:
                w = self.edges[i].target
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
        if seen != len(self.nodes):
            raise TopologyError("transport graph contains a cycle")
        undirected_edges = len(self.edges)
        # a forest has |E| = |V| - components; count components by union-find
        parent = {v: v for v in self.nodes}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        comps = len(self.nodes)
        for e in self.edges:
            ra, rb = find(e.source), find(e.target)
            if ra != rb:
                parent[ra] = rb
                comps -= 1
        if undirected_edges != len(self.nodes) - comps:
            raise TopologyError("transport graph is not a forest")

    def compatible_initial(self, boundary_at_zero: Mapping[int, float]) -> None:
        """Exponential initial profiles giving constant node traces until data arrives."""
        order = self._topological()
        start = {}
        for v in order:
            val = boundary_at_zero.get(v, 0.0)
            for i in self.incoming[v]:
                val += start[i]
            for i in self.outgoing[v]:
                e = self.edges[i]
                coef = self.split[i] * val
                prof = ExpProfile(coef, e.m / e.d, e.length)
                self.initial[i] = prof
                start[i] = float(prof(0.0))

    def _topological(self) -> list[int]:
        indeg = {v: len(self.incoming[v]) for v in self.nodes}
        order, ready = [], sorted(v for v, k in indeg.items() if k == 0)
        while ready:
            v = ready.pop(0)
            order.append(v)
            for i in self.outgoing[v]:
                w = self.edges[i].target
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
        return order

    def node_trace(self, v: int, t: np.ndarray, boundary: BoundaryFn, n_samples: int = 1) -> np.ndarray:
        """``c_v`` at times ``t`` as an array ``(n_samples, len(t))``.

        ``boundary(node, times)`` returns source values with shape
        ``(n_samples, len(times))``.
        """
        if v not in self.incoming and v not in self.outgoing:
            raise TopologyError(f"node {v} is not part of the transport graph")
        t = np.asarray(t, dtype=float)
        return self._value(v, t, boundary, n_samples)

    def _value(self, v, t, boundary, n_samples):
        out = np.zeros((n_samples, t.size))
        if v in self.sources and t.size:
            out += boundary(v, t)
        for i in self.incoming[v]:
            e = self.edges[i]
            tau = e.delay
            late = t >= tau - TIME_TOL
            if late.any():
                up = self._value(e.source, np.maximum(t[late] - tau, 0.0), boundary, n_samples)
                out[:, late] += math.exp(e.m * tau) * self.split[i] * up
            if (~late).any():
                if i not in self.initial:
                    raise SchemaError(f"edge {e.label or i} has no initial profile")
                te = t[~late]
                out[:, ~late] += np.exp(e.m * te) * np.asarray(self.initial[i](abs(e.d) * te), dtype=float)
        return out

    def paths(self, v: int) -> list[tuple[int, float, float]]:
        """Source-to-``v`` paths as (source, delay, weight) for late times."""
        out = []

        def walk(w, delay, weight):
            if w in self.sources:
                out.append((w, delay, weight))
            for i in self.incoming[w]:
                e = self.edges[i]
                walk(e.source, delay + e.delay, weight * math.exp(e.m * e.delay) * self.split[i])

        walk(v, 0.0, 1.0)
        return out

    def affine_trace(self, v: int, t_star: float, boundary_const: BoundaryFn):
        """Split ``c_v(t*)`` into ``const + sum_j w_j b_{src_j}(tau_j)``.

        Returns ``(const, [(source, tau, weight), ...])``. Terms whose data has
        not arrived yet are folded into ``const`` through the initial profiles.
        """
        terms: list[tuple[int, float, float]] = []

        def walk(w, t, weight):
            const = 0.0
            if w in self.sources:
                terms.append((w, t, weight))
            for i in self.incoming[w]:
                e = self.edges[i]
                if t >= e.delay - TIME_TOL:
                    const += walk(e.source, max(t - e.delay, 0.0), weight * math.exp(e.m * e.delay) * self.split[i])
                else:
                    const += weight * math.exp(e.m * t) * float(self.initial[i](abs(e.d) * t))
            return const

        const = walk(v, float(t_star), 1.0)
        return const, terms


def time_grid(horizon: float, points: int = 101) -> np.ndarray:
    return np.linspace(0.0, horizon, points)


def min_max_trace(trace: np.ndarray, t: np.ndarray, t_start: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Min and max of traces over grid points with ``t >= t_start``."""
    t = np.asarray(t, dtype=float)
    if t_start > t[-1] + TIME_TOL:
        raise EmptyWindow(f"window start {t_start} lies after the horizon {t[-1]}")
    window = t >= t_start - TIME_TOL
    seg = np.asarray(trace)[..., window]
    return seg.min(axis=-1), seg.max(axis=-1)


def chain_as_tree(chain: TransportChain, sources=None) -> TransportTree:
    """The chain as a ``TransportTree`` with nodes ``0..n``."""
    edges = [TransportEdge(k, k - 1, chain.d[k - 1], chain.m[k - 1], chain.lengths[k - 1], f"e{k}")
             for k in range(1, chain.n + 1)]
    tree = TransportTree(edges, tuple(range(1, chain.n + 1)) if sources is None else tuple(sources),
                         chain.horizon)
    for k in range(chain.n):
        tree.initial[k] = chain.initial[k]
    return tree
