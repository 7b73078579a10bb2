import json
import math

import numpy as np
import pytest
from hypothesis import given, settings

from flowprob.errors import SchemaError, TopologyError
from flowprob.network import (build_incidence, network_from_dict, network_to_dict, parse_network,
                              path_matrix_is_exact, phi_coefficient, serialize_network, Edge)

from strategies import random_tree_doc

TWO_EDGE = {
    "nodes": [{"id": 0, "kind": "supply", "p0": 60}, {"id": 1, "kind": "demand", "bounds": [40, 60]},
              {"id": 2, "kind": "demand", "bounds": [30, 50]}],
    "edges": [{"from": 0, "to": 1, "phi": 100}, {"from": 0, "to": 2, "phi": 100}],
}


def test_parse_two_edge_tree():
    net = network_from_dict(TWO_EDGE)
    assert net.supplies == [0]
    assert net.bounded_nodes == [1, 2]
    np.testing.assert_allclose(net.phi, [100, 100])
    np.testing.assert_allclose(net.upper_bounds(), [60, 50])


def test_null_upper_bound_is_unbounded():
    doc = json.loads(json.dumps(TWO_EDGE))
    doc["nodes"][1]["bounds"] = [40, None]
    net = network_from_dict(doc)
    assert math.isinf(net.upper_bounds()[0])
    again = network_from_dict(json.loads(serialize_network(net)))
    assert math.isinf(again.upper_bounds()[0])


def test_roundtrip():
    net = network_from_dict(TWO_EDGE)
    assert network_from_dict(network_to_dict(net)) == net


@pytest.mark.parametrize("mutate, exc", [
    (lambda d: d.pop("edges"), SchemaError),
    (lambda d: d["nodes"][1].update(kind="sink"), SchemaError),
    (lambda d: d["nodes"][0].pop("p0"), SchemaError),
    (lambda d: d["edges"][0].update(to=7), SchemaError),
    (lambda d: d["edges"].append({"from": 1, "to": 2, "phi": 1}), TopologyError),
    (lambda d: d["edges"][0].update(phi=-1), (SchemaError, TopologyError)),
])
def test_malformed_documents(mutate, exc):
    doc = json.loads(json.dumps(TWO_EDGE))
    mutate(doc)
    with pytest.raises(exc):
        network_from_dict(doc)


def test_parse_network_rejects_bad_json():
    with pytest.raises(SchemaError):
        parse_network("{nodes: ")


def test_phi_from_pipe_data():
    e = Edge(0, 1, "pipe", "e", friction=0.02, diameter=0.5, sound_speed=340.0, length=1000.0)
    rs_t = 340.0**2 / 2  # (R_S T)^2 = c^4 / 4
    # by hand: 0.02 / (340^2 * 0.5) * 340^4 / 4 * 1000 = 0.01 * 340^2 * 1000
    assert phi_coefficient(e, rs_t) == pytest.approx(0.01 * 340.0**2 * 1000.0)


def test_direct_phi_wins_and_frictionless():
    assert phi_coefficient(Edge(0, 1, "pipe", "e", phi=100.0), 1.0) == 100.0
    e = Edge(0, 1, "pipe", "e", friction=0.0, diameter=0.5, sound_speed=340.0, length=1000.0)
    assert phi_coefficient(e, 1.0) == 0.0
    with pytest.raises(SchemaError):
        phi_coefficient(Edge(0, 1, "pipe", "e", friction=0.02, diameter=0.5, sound_speed=340.0, length=1.0))


def test_incidence_needs_single_supply(gaslib):
    with pytest.raises(TopologyError):
        build_incidence(gaslib.net)


def test_incidence_two_edge():
    inc = build_incidence(network_from_dict(TWO_EDGE))
    assert inc.node_order[0] == 0
    np.testing.assert_array_equal(inc.full.sum(axis=0), 0)
    np.testing.assert_array_equal(inc.inverse, np.eye(2))


@settings(max_examples=60, deadline=None)
@given(random_tree_doc())
def test_incidence_algebra_exact(doc):
    """Reduced incidence times its path inverse is the identity, in exact integers."""
    inc = build_incidence(network_from_dict(doc))
    assert path_matrix_is_exact(inc)
    n = inc.reduced.shape[0]
    # upper triangular in BFS numbering and entries in {-1, 0, 1}
    assert np.all(np.tril(inc.reduced, -1) == 0)
    assert set(np.unique(inc.full)).issubset({-1, 0, 1})
    assert inc.inverse.shape == (n, n)
