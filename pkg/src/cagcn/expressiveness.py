"""Small-graph tools for comparing what neighborhood aggregators can tell apart.

Includes Weisfeiler-Lehman color refinement, exhaustive isomorphism search
on neighborhood subgraphs, and a fixed pair of neighborhoods that degree
normalization cannot separate but CIR weighting can.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cir import CirConfig, CirMatrix, build_propagation_weights, compute_cir
from .graph import BipartiteGraph
from .propagation import GraphTooLargeError

MAX_SEARCH_NODES = 16


@dataclass(frozen=True, eq=False)
class NeighborhoodSubgraph:
    """Induced subgraph around ``center`` with integer node labels.

    ``nodes`` is sorted; ``edges`` holds ``(a, b)`` pairs with ``a < b``.
    """

    center: int
    nodes: tuple
    edges: frozenset
    labels: dict

    def __post_init__(self):
        nodes = tuple(sorted(set(self.nodes)))
        if self.center not in nodes:
            raise ValueError("center must belong to the vertex set")
        edges = frozenset((min(a, b), max(a, b)) for a, b in self.edges)
        node_set = set(nodes)
        for a, b in edges:
            if a == b:
                raise ValueError("self-loops are not allowed")
            if a not in node_set or b not in node_set:
                raise ValueError(f"edge ({a}, {b}) leaves the vertex set")
        labels = {p: int(self.labels.get(p, 0)) for p in nodes} if self.labels else {p: 0 for p in nodes}
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_edges(cls, center, edges, labels=None) -> "NeighborhoodSubgraph":
        """The radius-2 induced subgraph of ``center`` in the graph given by ``edges``."""
        adj = _adjacency_from_edges(edges)
        adj.setdefault(center, set())
        dist = _distances(adj, center, 2)
        keep = set(dist)
        induced = [(a, b) for a, b in edges if a in keep and b in keep]
        return cls(center, tuple(keep), frozenset(induced), dict(labels or {}))

    @classmethod
    def from_graph(cls, graph: BipartiteGraph, node: int, labels=None, hops: int = 2) -> "NeighborhoodSubgraph":
        """Subgraph around joint index ``node`` (users first) of a bipartite graph.

        ``hops=2`` keeps the center, its neighbors and their neighbors;
        ``hops=1`` keeps the center and its neighbors.
        """
        adj = graph.adjacency()
        frontier, seen = {int(node)}, {int(node)}
        for _ in range(hops):
            nxt = set()
            for p in frontier:
                nxt.update(int(q) for q in adj.indices[adj.indptr[p]:adj.indptr[p + 1]])
            frontier = nxt - seen
            seen |= nxt
        edges = []
        for p in seen:
            for q in adj.indices[adj.indptr[p]:adj.indptr[p + 1]]:
                if int(q) in seen and p < q:
                    edges.append((p, int(q)))
        labels = {p: labels[p] for p in seen} if labels is not None else None
        return cls(int(node), tuple(seen), frozenset(edges), labels or {})

    def adjacency(self) -> dict:
        adj = {p: set() for p in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def restrict(self, hops: int) -> "NeighborhoodSubgraph":
        """Induced subgraph on nodes within ``hops`` of the center."""
        keep = set(_distances(self.adjacency(), self.center, hops))
        edges = [(a, b) for a, b in self.edges if a in keep and b in keep]
        return NeighborhoodSubgraph(self.center, tuple(keep), frozenset(edges),
                                    {p: self.labels[p] for p in keep})

    def relabel_key(self) -> tuple:
        """Structure key with the center as 0 and other nodes renumbered by id."""
        order = [self.center] + [p for p in self.nodes if p != self.center]
        index = {p: k for k, p in enumerate(order)}
        edges = tuple(sorted((min(index[a], index[b]), max(index[a], index[b])) for a, b in self.edges))
        return len(order), edges, tuple(self.labels[p] for p in order)


def _adjacency_from_edges(edges) -> dict:
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def _distances(adj, source, max_hop) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        p = queue.popleft()
        if dist[p] == max_hop:
            continue
        for q in sorted(adj.get(p, ())):
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return dist


def _color_hash(old, neighbor_colors) -> str:
    payload = repr((old, tuple(sorted(neighbor_colors))))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


def wl_refine(subgraph: NeighborhoodSubgraph, iterations: int = None) -> dict:
    """1-WL colors: repeatedly hash each node's color with its neighbors' color multiset.

    Colors are canonical strings, so they can be compared across graphs.
    With ``iterations=None`` refinement runs until the partition stops
    splitting.
    """
    if iterations is not None and iterations < 1:
        raise ValueError("iterations must be at least 1")
    adj = subgraph.adjacency()
    colors = {p: _color_hash(("label", subgraph.labels[p]), ()) for p in subgraph.nodes}
    rounds = iterations if iterations is not None else len(subgraph.nodes)
    for _ in range(rounds):
        new = {p: _color_hash(colors[p], [colors[q] for q in adj[p]]) for p in subgraph.nodes}
        stable = len(set(new.values())) == len(set(colors.values()))
        colors = new
        if iterations is None and stable:
            break
    return colors


def subtree_isomorphic(a: NeighborhoodSubgraph, b: NeighborhoodSubgraph, iterations: int = 1) -> bool:
    """Whether the centers' depth-``iterations`` unfolding trees coincide."""
    return wl_refine(a, iterations)[a.center] == wl_refine(b, iterations)[b.center]


def _search_isomorphism(a: NeighborhoodSubgraph, b: NeighborhoodSubgraph):
    if max(len(a.nodes), len(b.nodes)) > MAX_SEARCH_NODES:
        raise GraphTooLargeError(
            f"exhaustive search is limited to {MAX_SEARCH_NODES} nodes per graph"
        )
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return None
    if a.labels[a.center] != b.labels[b.center]:
        return None
    adj_a, adj_b = a.adjacency(), b.adjacency()
    order = list(_distances(adj_a, a.center, len(a.nodes)))
    order += [p for p in a.nodes if p not in set(order)]
    mapping = {a.center: b.center}
    used = {b.center}

    def extend(k):
        if k == len(order):
            return True
        p = order[k]
        for q in b.nodes:
            if q in used or a.labels[p] != b.labels[q] or len(adj_a[p]) != len(adj_b[q]):
                continue
            if any((r in adj_a[p]) != (mapping[r] in adj_b[q]) for r in order[:k]):
                continue
            mapping[p] = q
            used.add(q)
            if extend(k + 1):
                return True
            del mapping[p]
            used.discard(q)
        return False

    if len(adj_a[a.center]) != len(adj_b[b.center]):
        return None
    return dict(mapping) if extend(1) else None


def subgraph_isomorphic(a: NeighborhoodSubgraph, b: NeighborhoodSubgraph) -> bool:
    """Label- and edge-preserving bijection of the induced 1-hop subgraphs fixing the centers."""
    return _search_isomorphism(a.restrict(1), b.restrict(1)) is not None


def bipartite_subgraph_isomorphic(a: NeighborhoodSubgraph, b: NeighborhoodSubgraph):
    """Exhaustive bijection search over the full radius-2 vertex sets.

    Returns ``(True, mapping)`` when a center-fixing, label- and
    edge-preserving bijection exists, else ``(False, None)``.
    """
    witness = _search_isomorphism(a, b)
    return witness is not None, witness


# Fixture: two item-side neighborhoods of the same shape one hop out.
# First: center u with items a, b, c; a and b share a second user v, c has w.
# Second: center u' with items a', b', c', each with its own second user.
_PAIR_ITEMS = 3
_FIRST_SECOND_HOP = (0, 0, 1)
_SECOND_SECOND_HOP = (0, 1, 2)


def _fixture_graph(second_hop) -> BipartiteGraph:
    users = [0] * _PAIR_ITEMS + [1 + s for s in second_hop]
    items = list(range(_PAIR_ITEMS)) * 2
    return BipartiteGraph.from_edges(users, items)


def _fixture_labels(graph: BipartiteGraph) -> np.ndarray:
    """Users share label 0; item ``k`` carries label ``k + 1`` in both graphs."""
    labels = np.zeros(graph.num_nodes, dtype=np.int64)
    labels[graph.num_users:] = np.arange(1, graph.num_items + 1)
    return labels


def distinguishing_pair() -> tuple:
    """The two fixture neighborhoods as :class:`NeighborhoodSubgraph` objects (centers at 0)."""
    out = []
    for second_hop in (_FIRST_SECOND_HOP, _SECOND_SECOND_HOP):
        graph = _fixture_graph(second_hop)
        labels = _fixture_labels(graph)
        out.append(NeighborhoodSubgraph.from_graph(graph, 0, {p: int(labels[p]) for p in range(graph.num_nodes)}))
    return tuple(out)


def _center_after_one_layer(graph: BipartiteGraph, mode: str, metric: str, gamma: float,
                            uniform_cir: bool) -> np.ndarray:
    labels = _fixture_labels(graph)
    features = np.eye(int(labels.max()) + 1)[labels]
    cir = compute_cir(graph, CirConfig(metric=metric))
    if uniform_cir:
        w = cir.weights.copy()
        w.data[:] = 1.0
        cir = CirMatrix(weights=w, config=cir.config)
    weights = build_propagation_weights(graph, cir, mode=mode,
                                        gamma=gamma if mode == "cagcn_star" else None)
    return (weights.matrix @ features)[0]


def distinguishing_test(metric: str = "jc", mode: str = "cagcn", gamma: float = 1.0,
                        uniform_cir: bool = False, atol: float = 1e-12) -> dict:
    """Center embeddings after one layer, compared across the fixture pair.

    Degree-normalized weights coincide for both centers; CIR-based weights
    (``mode`` of ``cagcn`` or ``cagcn_star``) do not. ``uniform_cir`` sets
    every CIR entry to the same value, which removes the difference.
    """
    first = _fixture_graph(_FIRST_SECOND_HOP)
    second = _fixture_graph(_SECOND_SECOND_HOP)
    report = {}
    for key, m in (("degree_sym_equal", "degree_sym"), ("cagc_equal", mode)):
        x = _center_after_one_layer(first, m, metric, gamma, uniform_cir)
        y = _center_after_one_layer(second, m, metric, gamma, uniform_cir)
        report[key] = bool(np.allclose(x, y, rtol=0.0, atol=atol))
    return report


def enumerate_bipartite_graphs(max_nodes: int):
    """Yield ``(num_users, num_items, edges)`` for every labeled bipartite graph.

    Covers all side sizes with at least one node on each side and at most
    ``max_nodes`` nodes in total, and every subset of user-item pairs.
    Node ids are joint (users first).
    """
    for total in range(2, max_nodes + 1):
        for n in range(1, total):
            m = total - n
            pairs = [(u, n + i) for u in range(n) for i in range(m)]
            for mask in range(1 << len(pairs)):
                yield n, m, [pairs[k] for k in range(len(pairs)) if mask >> k & 1]


def one_hop_neighborhoods(max_nodes: int) -> list:
    """Distinct (up to center-first renumbering) 1-hop neighborhood subgraphs."""
    seen = {}
    for n, m, edges in enumerate_bipartite_graphs(max_nodes):
        adj = {p: set() for p in range(n + m)}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        for center in range(n + m):
            keep = {center} | adj[center]
            induced = frozenset((a, b) for a, b in edges if a in keep and b in keep)
            sub = NeighborhoodSubgraph(center, tuple(keep), induced, {})
            seen.setdefault(sub.relabel_key(), sub)
    return list(seen.values())


def subtree_vs_subgraph_agreement(max_nodes: int = 8) -> dict:
    """Compare 1-round WL equivalence with exhaustive 1-hop isomorphism on all pairs."""
    subs = one_hop_neighborhoods(max_nodes)
    pairs = agree = 0
    disagreements = []
    for a, b in itertools.combinations_with_replacement(subs, 2):
        pairs += 1
        s, g = subtree_isomorphic(a, b), subgraph_isomorphic(a, b)
        if s == g:
            agree += 1
        else:
            disagreements.append((a.relabel_key(), b.relabel_key()))
    return {"neighborhoods": len(subs), "pairs": pairs, "agree": agree, "disagreements": disagreements}
