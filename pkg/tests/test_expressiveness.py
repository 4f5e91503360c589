import time

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cagcn.expressiveness import (
    MAX_SEARCH_NODES,
    NeighborhoodSubgraph,
    bipartite_subgraph_isomorphic,
    distinguishing_pair,
    distinguishing_test,
    one_hop_neighborhoods,
    subgraph_isomorphic,
    subtree_isomorphic,
    subtree_vs_subgraph_agreement,
    wl_refine,
)
from cagcn.propagation import GraphTooLargeError
from strategies import bipartite_graphs


def networkx_isomorphic(a: NeighborhoodSubgraph, b: NeighborhoodSubgraph) -> bool:
    """Center-fixing labeled isomorphism via networkx's VF2 matcher."""
    def build(sub):
        g = nx.Graph()
        for p in sub.nodes:
            g.add_node(p, tag=(sub.labels[p], p == sub.center))
        g.add_edges_from(sub.edges)
        return g
    matcher = nx.algorithms.isomorphism.GraphMatcher(
        build(a), build(b), node_match=lambda x, y: x["tag"] == y["tag"])
    return matcher.is_isomorphic()


def shuffled(sub: NeighborhoodSubgraph, rng) -> NeighborhoodSubgraph:
    perm = dict(zip(sub.nodes, (rng.permutation(len(sub.nodes)) + 100).tolist()))
    return NeighborhoodSubgraph(perm[sub.center], tuple(perm.values()),
                                frozenset((perm[a], perm[b]) for a, b in sub.edges),
                                {perm[p]: c for p, c in sub.labels.items()})


def test_regular_graph_keeps_one_color():
    # complete bipartite K(3,3): every node looks alike
    edges = [(u, 3 + i) for u in range(3) for i in range(3)]
    sub = NeighborhoodSubgraph.from_edges(0, edges)
    assert len(set(wl_refine(sub, 1).values())) == 1
    assert len(set(wl_refine(sub).values())) == 1


def test_degree_difference_splits_after_one_round():
    a = NeighborhoodSubgraph.from_edges(0, [(0, 1), (0, 2)])
    b = NeighborhoodSubgraph.from_edges(0, [(0, 1), (0, 2), (0, 3)])
    assert wl_refine(a, 1)[0] != wl_refine(b, 1)[0]
    assert not subtree_isomorphic(a, b)


def test_iterations_must_be_positive():
    with pytest.raises(ValueError):
        wl_refine(NeighborhoodSubgraph.from_edges(0, [(0, 1)]), 0)


@settings(max_examples=80, deadline=None)
@given(bipartite_graphs(max_users=4, max_items=4), st.integers(0, 2**31 - 1))
def test_relabeling_invariance(graph, seed):
    rng = np.random.default_rng(seed)
    labels = {p: int(rng.integers(0, 2)) for p in range(graph.num_nodes)}
    sub = NeighborhoodSubgraph.from_graph(graph, int(rng.integers(0, graph.num_nodes)), labels)
    other = shuffled(sub, rng)
    colors_a, colors_b = wl_refine(sub), wl_refine(other)
    assert sorted(colors_a.values()) == sorted(colors_b.values())
    found, witness = bipartite_subgraph_isomorphic(sub, other)
    assert found
    assert witness[sub.center] == other.center
    assert {(min(witness[a], witness[b]), max(witness[a], witness[b])) for a, b in sub.edges} == set(other.edges)
    assert all(sub.labels[p] == other.labels[witness[p]] for p in sub.nodes)


@settings(max_examples=150, deadline=None)
@given(bipartite_graphs(max_users=4, max_items=4), bipartite_graphs(max_users=4, max_items=4),
       st.integers(0, 2**31 - 1))
def test_search_agrees_with_networkx(g1, g2, seed):
    rng = np.random.default_rng(seed)
    a = NeighborhoodSubgraph.from_graph(g1, int(rng.integers(0, g1.num_nodes)))
    b = NeighborhoodSubgraph.from_graph(g2, int(rng.integers(0, g2.num_nodes)))
    assert bipartite_subgraph_isomorphic(a, b)[0] == networkx_isomorphic(a, b)
    assert subgraph_isomorphic(a, b) == networkx_isomorphic(a.restrict(1), b.restrict(1))
    if networkx_isomorphic(a, b):
        assert sorted(wl_refine(a).values()) == sorted(wl_refine(b).values())


def test_self_match_gives_identity():
    first, _ = distinguishing_pair()
    found, witness = bipartite_subgraph_isomorphic(first, first)
    assert found and witness == {p: p for p in first.nodes}


def test_edge_count_mismatch():
    a = NeighborhoodSubgraph.from_edges(0, [(0, 1), (1, 2)])
    b = NeighborhoodSubgraph.from_edges(0, [(0, 1), (1, 2), (0, 3)])
    assert bipartite_subgraph_isomorphic(a, b) == (False, None)


def test_search_size_cap():
    star = NeighborhoodSubgraph.from_edges(0, [(0, k) for k in range(1, MAX_SEARCH_NODES + 1)])
    with pytest.raises(GraphTooLargeError):
        bipartite_subgraph_isomorphic(star, star)


def test_fixture_pair_properties():
    first, second = distinguishing_pair()
    assert not bipartite_subgraph_isomorphic(first, second)[0]
    assert not networkx_isomorphic(first, second)
    assert wl_refine(first, 1)[first.center] == wl_refine(second, 1)[second.center]
    assert subgraph_isomorphic(first, second)
    deg = lambda sub: sorted(len(sub.adjacency()[q]) for q in sub.adjacency()[sub.center])
    assert deg(first) == deg(second)


def test_distinguishing_report():
    start = time.perf_counter()
    for _ in range(3):
        assert distinguishing_test() == {"degree_sym_equal": True, "cagc_equal": False}
    assert time.perf_counter() - start < 5.0


def test_uniform_cir_removes_the_difference():
    assert distinguishing_test(uniform_cir=True) == {"degree_sym_equal": True, "cagc_equal": True}


def test_blended_weights_also_separate():
    assert distinguishing_test(mode="cagcn_star", gamma=1.0)["cagc_equal"] is False


def test_triangle_and_path_split_outside_bipartite_graphs():
    # in a general graph, 1-WL can miss structure that isomorphism sees
    tri = NeighborhoodSubgraph.from_edges(0, [(0, 1), (0, 2), (1, 2)])
    path = NeighborhoodSubgraph.from_edges(0, [(0, 1), (0, 2), (1, 3), (2, 3)]).restrict(1)
    assert subtree_isomorphic(tri, path)
    assert not subgraph_isomorphic(tri, path)


def test_one_hop_neighborhoods_are_stars():
    for sub in one_hop_neighborhoods(5):
        assert all(sub.center in edge for edge in sub.edges)


def test_subtree_subgraph_agreement_small():
    result = subtree_vs_subgraph_agreement(6)
    assert result["agree"] == result["pairs"] and not result["disagreements"]
