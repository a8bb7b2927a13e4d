import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from polydiff import diffgraph as dg
from polydiff.simjoin import ScoredPair


def test_triangle_pagerank():
    g = dg.build_graph([("A", "B", 80.0), ("B", "C", 80.0), ("A", "C", 80.0)])
    r = dg.pagerank(g, tol=1e-12)
    for v in "ABC":
        assert r[v] == pytest.approx(1 / 3, abs=1e-9)


def _random_graph(rng, n, p=0.4):
    nodes = [f"N{i}" for i in range(n)]
    edges = {}
    for a, b in itertools.combinations(nodes, 2):
        if rng.random() < p:
            edges[(a, b)] = float(rng.uniform(1, 100))
    return nodes, edges


def _graph(nodes, edges):
    g = dg.build_graph([(a, b, w) for (a, b), w in edges.items()])
    g.nodes.update(nodes)
    return g


@pytest.mark.parametrize("seed", range(20))
def test_pagerank_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    nodes, edges = _random_graph(rng, int(rng.integers(2, 12)))
    g = _graph(nodes, edges)
    r = dg.pagerank(g, tol=0, max_iter=30)
    expected = oracles.dense_pagerank(nodes, edges, 0.85, 30)
    assert sum(r.values()) == pytest.approx(1.0, abs=1e-9)
    for v in nodes:
        assert r[v] == pytest.approx(expected[v], abs=1e-12)
    conv = dg.pagerank(g, tol=1e-13, max_iter=1000)
    stat = oracles.stationary_pagerank(nodes, edges, 0.85)
    for v in nodes:
        assert conv[v] == pytest.approx(stat[v], abs=1e-10)


def test_pagerank_errors():
    with pytest.raises(dg.GraphError):
        dg.pagerank(dg.SimGraph())
    g = dg.build_graph([("A", "B", 90.0)])
    with pytest.raises(dg.GraphError):
        dg.pagerank(g, damping=1.0)


@pytest.mark.parametrize("seed", range(200))
def test_min_cost_path_matches_enumeration(seed):
    rng = np.random.default_rng(1000 + seed)
    nodes, edges = _random_graph(rng, int(rng.integers(2, 11)))
    g = _graph(nodes, edges)
    s, t = rng.choice(nodes, 2, replace=len(nodes) < 2)
    res = dg.min_cost_path(g, s, t)
    best = oracles.all_simple_path_costs(edges, s, t) if s != t else 0.0
    if math.isinf(best):
        assert not res.reachable
    else:
        assert res.reachable
        assert res.cost == pytest.approx(best, rel=1e-12, abs=1e-12)
        assert res.path[0] == s and res.path[-1] == t
        hops = sum(dg.edge_cost(edges[tuple(sorted(p))]) for p in zip(res.path, res.path[1:]))
        assert hops == pytest.approx(res.cost, rel=1e-12, abs=1e-12)


def test_path_tie_break():
    # A-B-D and A-C-D both cost 2; the lexicographically smaller path wins
    g = dg.build_graph([("A", "C", 50.0), ("C", "D", 50.0), ("A", "B", 50.0), ("B", "D", 50.0)])
    assert dg.min_cost_path(g, "A", "D").path == ["A", "B", "D"]
    # direct edge of cost 2 beats two hops of cost 1 each only on hop count
    g = dg.build_graph([("A", "D", 100 / 3), ("A", "B", 50.0), ("B", "D", 50.0)])
    assert dg.min_cost_path(g, "A", "D").path == ["A", "D"]


def test_unreachable_and_unknown():
    g = dg.build_graph([("A", "B", 90.0), ("C", "D", 90.0)])
    res = dg.min_cost_path(g, "A", "D")
    assert not res.reachable
    assert '"reachable": false' in res.to_json()
    with pytest.raises(dg.GraphError):
        dg.min_cost_path(g, "A", "Z")


@pytest.mark.parametrize("seed", range(30))
def test_groups_match_union_find(seed):
    rng = np.random.default_rng(seed)
    nodes, edges = _random_graph(rng, int(rng.integers(1, 15)), p=0.15)
    g = _graph(nodes, edges)
    got = [frozenset(c) for c in dg.diffusion_groups(g)]
    assert got == oracles.union_find_groups(nodes, edges)


def test_build_graph_threshold_and_conflicts(caplog):
    pairs = [ScoredPair("A", "B", "cosine", 95.0), ("B", "A", 97.0), ("A", "C", 60.0), ("C", "C", 99.0)]
    g = dg.build_graph(pairs, threshold=70)
    assert g.edges == {("A", "B"): 97.0}
    assert g.nodes == {"A", "B"}
    assert "conflicting" in caplog.text


def test_state_influence():
    ranks = {"FL/2005/A": 0.5, "FL/2006/B": 0.2, "MI/2005/C": 0.3}
    out = dg.state_influence(ranks)
    assert [s for s, _ in out] == ["FL", "MI"]
    assert out[0][1] == pytest.approx(0.7)


def test_edge_file_round_trip(tmp_path):
    g = dg.build_graph([("A", "B", 91.38), ("B", "C", 75.5)])
    dg.write_edges(tmp_path / "e.csv", g)
    assert dg.read_edges(tmp_path / "e.csv") == g.edge_rows()


@given(st.floats(0.01, 100))
def test_edge_cost_inverts_similarity(w):
    assert 100 / (1 + dg.edge_cost(w)) == pytest.approx(w, rel=1e-12)


def test_star_center_matches_matrix_power():
    edges = {("C", "L1"): 80.0, ("C", "L2"): 80.0, ("C", "L3"): 80.0}
    g = dg.build_graph([(a, b, w) for (a, b), w in edges.items()])
    expected = oracles.dense_pagerank(g.nodes, edges, 0.85, 50)
    r = dg.pagerank(g, tol=0, max_iter=50)
    assert r["C"] == pytest.approx(expected["C"], abs=1e-8)
    assert r["L1"] == pytest.approx(r["L2"], abs=1e-9) and r["L2"] == pytest.approx(r["L3"], abs=1e-9)


def test_small_examples():
    assert dg.build_graph([]).nodes == set()
    r = dg.pagerank(dg.build_graph([("A", "B", 70.5)]))
    assert r == pytest.approx({"A": 0.5, "B": 0.5}, abs=1e-12)
    assert dg.build_graph([("A", "B", 100.0)], threshold=100).edges == {}
    g = dg.build_graph([("A", "B", 100.0)])
    assert dg.min_cost_path(g, "A", "A").path == ["A"]
    res = dg.min_cost_path(g, "A", "B")
    assert (res.path, res.cost) == (["A", "B"], 0.0)
    g = dg.build_graph([("A", "B", 90.0), ("B", "C", 90.0), ("A", "C", 90.0)])
    g.nodes.add("Z")
    assert [len(c) for c in dg.diffusion_groups(g)] == [3, 1]


def test_rebuild_from_edge_dump():
    g = dg.build_graph([("A", "B", 90.0), ("B", "C", 75.0)])
    assert dg.build_graph(g.edge_rows()).edges == g.edges


def test_isolated_node_gets_teleport_share_only():
    g = dg.build_graph([("A", "B", 90.0)])
    g.nodes.add("Z")
    r = dg.pagerank(g, tol=1e-14, max_iter=1000)
    assert sum(r.values()) == pytest.approx(1.0, abs=1e-12)
    assert r["Z"] < r["A"]
