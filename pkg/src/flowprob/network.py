"""Network graphs, incidence algebra and the JSON network format.

A network file looks like::

    {
      "gas": {"R_S": 518.3, "T": 288.15},            # optional
      "compressor_convention": "out_sq_times_u",      # optional
      "nodes": [
        {"id": 0, "kind": "supply", "p0": 60},
        {"id": 1, "kind": "demand", "bounds": [40, 60]}
      ],
      "edges": [
        {"id": "e1", "from": 0, "to": 1, "kind": "pipe", "phi": 100}
      ]
    }

Pipes carry either ``phi`` directly or the physical tuple
``{"lambda", "D", "c", "L"}``; compressors carry ``u``; valves carry
``open``.  Demand nodes without ``bounds`` are unconstrained junctions.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SchemaError, TopologyError

NODE_KINDS = ("supply", "demand")
EDGE_KINDS = ("pipe", "compressor", "valve")

# p_out^2 = u * p_in^2 reproduces the GasLib-11 reference pressures;
# "in_over_out" reads p_in^2 / p_out^2 = u literally.
COMPRESSOR_CONVENTIONS = ("out_sq_times_u", "in_over_out")


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    p0: float | None = None
    pmin: float | None = None
    pmax: float | None = None

    @property
    def bounded(self) -> bool:
        return self.kind == "demand" and self.pmin is not None


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    kind: str
    label: str = ""
    phi: float | None = None
    friction: float | None = None
    diameter: float | None = None
    sound_speed: float | None = None
    length: float | None = None
    u: float = 1.0
    open: bool = True

    @property
    def active(self) -> bool:
        return not (self.kind == "valve" and not self.open)


def phi_coefficient(edge: Edge, rs_t: float | None = None) -> float:
    """Friction coefficient ``lambda/(c^2 D) (R_S T)^2 L`` of a pipe.

    A directly configured ``phi`` takes precedence over the physical tuple.
    Compressors and valves are frictionless.
    """
    if edge.kind != "pipe":
        return 0.0
    if edge.phi is not None:
        return float(edge.phi)
    if rs_t is None:
        raise SchemaError(f"pipe {edge.label or (edge.source, edge.target)} needs phi or gas constants R_S, T")
    return edge.friction / (edge.sound_speed**2 * edge.diameter) * rs_t**2 * edge.length


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    rs_t: float | None = None
    compressor_convention: str = "out_sq_times_u"
    gas: dict | None = None

    def __post_init__(self):
        ids = [nd.id for nd in self.nodes]
        if ids != list(range(len(ids))):
            raise SchemaError("node ids must be 0..n in order")
        if self.compressor_convention not in COMPRESSOR_CONVENTIONS:
            raise SchemaError(f"unknown compressor convention {self.compressor_convention!r}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def supplies(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.kind == "supply"]

    @property
    def bounded_nodes(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.bounded]

    @property
    def active_edges(self) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.active]

    @property
    def phi(self) -> np.ndarray:
        return np.array([phi_coefficient(e, self.rs_t) for e in self.edges])

    def lower_bounds(self, nodes=None) -> np.ndarray:
        nodes = self.bounded_nodes if nodes is None else nodes
        return np.array([self.nodes[i].pmin for i in nodes], dtype=float)

    def upper_bounds(self, nodes=None) -> np.ndarray:
        nodes = self.bounded_nodes if nodes is None else nodes
        return np.array([self.nodes[i].pmax for i in nodes], dtype=float)

    def compressor_factor(self, edge: Edge) -> float:
        """Factor k with p_to^2 = k * p_from^2 across a compressor."""
        if self.compressor_convention == "out_sq_times_u":
            return edge.u
        return 1.0 / edge.u

    def with_bounds(self, upper: dict[int, float] | None = None, lower: dict[int, float] | None = None,
                    supply_pressure: dict[int, float] | None = None) -> "Network":
        """Copy with replaced pressure bounds and/or supply pressures."""
        upper, lower, supply_pressure = upper or {}, lower or {}, supply_pressure or {}
        nodes = []
        for nd in self.nodes:
            nodes.append(Node(nd.id, nd.kind,
                              p0=supply_pressure.get(nd.id, nd.p0),
                              pmin=lower.get(nd.id, nd.pmin),
                              pmax=upper.get(nd.id, nd.pmax)))
        return Network(tuple(nodes), self.edges, self.rs_t, self.compressor_convention, self.gas)

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """Undirected adjacency over open edges: node -> [(edge index, neighbour)]."""
        adj: dict[int, list[tuple[int, int]]] = {nd.id: [] for nd in self.nodes}
        for i in self.active_edges:
            e = self.edges[i]
            adj[e.source].append((i, e.target))
            adj[e.target].append((i, e.source))
        return adj

    def components(self) -> list[list[int]]:
        adj = self.adjacency()
        seen: set[int] = set()
        comps = []
        for start in range(self.n_nodes):
            if start in seen:
                continue
            comp, queue = [], deque([start])
            seen.add(start)
            while queue:
                v = queue.popleft()
                comp.append(v)
                for _, w in adj[v]:
                    if w not in seen:
                        seen.add(w)
                        queue.append(w)
            comps.append(sorted(comp))
        return comps

    def validate(self) -> None:
        n_active = len(self.active_edges)
        comps = self.components()
        # forest <=> |E| = |V| - #components
        if n_active != self.n_nodes - len(comps):
            raise TopologyError("open edges contain a cycle")
        supplies = set(self.supplies)
        for comp in comps:
            if not supplies.intersection(comp):
                raise TopologyError(f"component {comp} has no supply node")
        for e in self.edges:
            if e.kind == "pipe":
                if e.phi is None:
                    for name in ("friction", "diameter", "sound_speed", "length"):
                        v = getattr(e, name)
                        if v is None or v <= 0 and name != "friction":
                            raise SchemaError(f"pipe field {name} must be positive")
                elif e.phi < 0:
                    raise SchemaError("phi must be nonnegative")
            if e.kind == "compressor" and e.u <= 0:
                raise SchemaError("compressor ratio must be positive")
        for nd in self.nodes:
            if nd.kind == "supply" and nd.p0 is None:
                raise SchemaError(f"supply node {nd.id} needs p0")
            if nd.bounded and not nd.pmin < nd.pmax:
                raise SchemaError(f"node {nd.id}: need pmin < pmax")


@dataclass(frozen=True)
class SpanningTree:
    """BFS tree of one component rooted at its lowest-id supply.

    ``order`` lists nodes in BFS order (root first). ``parent_edge[v]`` is the
    edge joining v to its parent and ``forward[v]`` says whether that edge is
    stored parent -> child in the network file.
    """

    root: int
    order: tuple[int, ...]
    parent: dict[int, int]
    parent_edge: dict[int, int]
    forward: dict[int, bool]
    children: dict[int, tuple[int, ...]] = field(repr=False)

    def path_edges(self, v: int) -> list[int]:
        """Edges on the root -> v path, root side first."""
        path = []
        while v != self.root:
            path.append(self.parent_edge[v])
            v = self.parent[v]
        return path[::-1]

    def subtree(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            w = stack.pop()
            out.append(w)
            stack.extend(self.children[w])
        return out


def spanning_tree(net: Network, root: int) -> SpanningTree:
    adj = net.adjacency()
    order, parent, parent_edge, forward = [root], {}, {}, {}
    children: dict[int, list[int]] = {root: []}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for i, w in sorted(adj[v], key=lambda t: t[1]):
            if w == root or w in parent:
                continue
            parent[w], parent_edge[w] = v, i
            forward[w] = net.edges[i].source == v
            children[v].append(w)
            children[w] = []
            order.append(w)
            queue.append(w)
    return SpanningTree(root, tuple(order), parent, parent_edge, forward,
                        {k: tuple(c) for k, c in children.items()})


def component_trees(net: Network) -> list[SpanningTree]:
    supplies = set(net.supplies)
    trees = []
    for comp in net.components():
        root = min(supplies.intersection(comp))
        trees.append(spanning_tree(net, root))
    return trees


@dataclass(frozen=True)
class IncidenceMatrix:
    """Incidence algebra of a single-supply tree in BFS numbering.

    Edges are re-oriented away from the root so that ``A`` is upper
    triangular. ``inverse[e, i] == 1`` iff edge e lies on the root -> node i
    path, i.e. column i of the inverse is the path indicator of node i.
    """

    full: np.ndarray
    reduced: np.ndarray
    inverse: np.ndarray
    node_order: tuple[int, ...]
    edge_order: tuple[int, ...]
    orientation: np.ndarray

    @property
    def demand_nodes(self) -> tuple[int, ...]:
        return self.node_order[1:]


def build_incidence(net: Network) -> IncidenceMatrix:
    if len(net.supplies) != 1:
        raise TopologyError("incidence reduction needs exactly one supply node")
    comps = net.components()
    if len(comps) != 1:
        raise TopologyError("incidence reduction needs a connected tree")
    tree = spanning_tree(net, net.supplies[0])
    n = len(tree.order) - 1
    pos = {v: k for k, v in enumerate(tree.order)}
    full = np.zeros((n + 1, n), dtype=np.int64)
    edge_order = []
    orient = np.empty(n)
    for j, v in enumerate(tree.order[1:]):
        full[pos[tree.parent[v]], j] = -1
        full[pos[v], j] = 1
        edge_order.append(tree.parent_edge[v])
        orient[j] = 1.0 if tree.forward[v] else -1.0
    reduced = full[1:, :]
    inverse = np.zeros((n, n), dtype=np.int64)
    for i, v in enumerate(tree.order[1:]):
        for e in tree.path_edges(v):
            inverse[edge_order.index(e), i] = 1
    return IncidenceMatrix(full, reduced, inverse, tree.order, tuple(edge_order), orient)


def _num(obj: dict, key: str, where: str, required: bool = True):
    if key not in obj or obj[key] is None:
        if required:
            raise SchemaError(f"{where}: missing {key!r}")
        return None
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(f"{where}: {key!r} must be a number")
    return float(val)


def network_from_dict(doc: dict[str, Any], validate: bool = True) -> Network:
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise SchemaError("network document needs 'nodes' and 'edges'")
    nodes = []
    for k, raw in enumerate(doc["nodes"]):
        where = f"node[{k}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: must be an object")
        kind = raw.get("kind")
        if kind not in NODE_KINDS:
            raise SchemaError(f"{where}: kind must be one of {NODE_KINDS}")
        nid = raw.get("id", k)
        if not isinstance(nid, int):
            raise SchemaError(f"{where}: id must be an integer")
        if kind == "supply":
            nodes.append(Node(nid, kind, p0=_num(raw, "p0", where)))
        else:
            bounds = raw.get("bounds")
            if bounds is None:
                nodes.append(Node(nid, kind))
            else:
                if not (isinstance(bounds, list) and len(bounds) == 2):
                    raise SchemaError(f"{where}: bounds must be [pmin, pmax]")
                if not isinstance(bounds[0], (int, float)) or isinstance(bounds[0], bool):
                    raise SchemaError(f"{where}: pmin must be a number")
                # a null upper bound leaves the node unbounded above
                pmax = math.inf if bounds[1] is None else float(bounds[1])
                nodes.append(Node(nid, kind, pmin=float(bounds[0]), pmax=pmax))
    nodes.sort(key=lambda nd: nd.id)

    edges = []
    for k, raw in enumerate(doc["edges"]):
        where = f"edge[{k}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: must be an object")
        kind = raw.get("kind", "pipe")
        if kind not in EDGE_KINDS:
            raise SchemaError(f"{where}: kind must be one of {EDGE_KINDS}")
        src, dst = raw.get("from"), raw.get("to")
        if not isinstance(src, int) or not isinstance(dst, int):
            raise SchemaError(f"{where}: 'from' and 'to' must be node ids")
        if not (0 <= src < len(nodes) and 0 <= dst < len(nodes)) or src == dst:
            raise SchemaError(f"{where}: invalid endpoints {src}->{dst}")
        label = str(raw.get("id", f"e{k + 1}"))
        if kind == "pipe":
            if "phi" in raw:
                edges.append(Edge(src, dst, kind, label, phi=_num(raw, "phi", where)))
            else:
                edges.append(Edge(src, dst, kind, label,
                                  friction=_num(raw, "lambda", where), diameter=_num(raw, "D", where),
                                  sound_speed=_num(raw, "c", where), length=_num(raw, "L", where)))
        elif kind == "compressor":
            edges.append(Edge(src, dst, kind, label, u=_num(raw, "u", where)))
        else:
            is_open = raw.get("open", True)
            if not isinstance(is_open, bool):
                raise SchemaError(f"{where}: 'open' must be a boolean")
            edges.append(Edge(src, dst, kind, label, open=is_open))

    gas = doc.get("gas")
    rs_t = None
    if gas is not None:
        rs_t = _num(gas, "R_S", "gas") * _num(gas, "T", "gas")
    net = Network(tuple(nodes), tuple(edges), rs_t,
                  doc.get("compressor_convention", "out_sq_times_u"), gas)
    if validate:
        net.validate()
    return net


def parse_network(text: str) -> Network:
    """Parse and validate a JSON network document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return network_from_dict(doc)


def load_network(path: str | Path) -> Network:
    return parse_network(Path(path).read_text())


def network_to_dict(net: Network) -> dict[str, Any]:
    nodes = []
    for nd in net.nodes:
        if nd.kind == "supply":
            nodes.append({"id": nd.id, "kind": "supply", "p0": nd.p0})
        elif nd.bounded:
            upper = None if math.isinf(nd.pmax) else nd.pmax
            nodes.append({"id": nd.id, "kind": "demand", "bounds": [nd.pmin, upper]})
        else:
            nodes.append({"id": nd.id, "kind": "demand"})
    edges = []
    for e in net.edges:
        raw: dict[str, Any] = {"id": e.label, "from": e.source, "to": e.target, "kind": e.kind}
        if e.kind == "pipe":
            if e.phi is not None:
                raw["phi"] = e.phi
            else:
                raw.update({"lambda": e.friction, "D": e.diameter, "c": e.sound_speed, "L": e.length})
        elif e.kind == "compressor":
            raw["u"] = e.u
        else:
            raw["open"] = e.open
        edges.append(raw)
    doc: dict[str, Any] = {"nodes": nodes, "edges": edges,
                           "compressor_convention": net.compressor_convention}
    if net.gas is not None:
        doc["gas"] = dict(net.gas)
    return doc


def serialize_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def path_matrix_is_exact(inc: IncidenceMatrix) -> bool:
    n = inc.reduced.shape[0]
    return bool(np.array_equal(inc.reduced @ inc.inverse, np.eye(n, dtype=np.int64)))
