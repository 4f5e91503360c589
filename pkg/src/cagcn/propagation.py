"""Linear message passing, layer pooling and inner-product scoring."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cir import PropagationWeights, degree_symmetric_weights
from .graph import BipartiteGraph


class GraphTooLargeError(ValueError):
    """Raised when an enumeration oracle is asked to handle a large graph."""


@dataclass(frozen=True, eq=False)
class PropagationPlan:
    weights: PropagationWeights
    layers: int = 3
    pooling: tuple = None

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError(f"layers must be nonnegative, got {self.layers}")
        pooling = self.pooling
        if pooling is None:
            pooling = (1.0 / (self.layers + 1),) * (self.layers + 1)
        pooling = tuple(float(b) for b in pooling)
        if len(pooling) != self.layers + 1:
            raise ValueError(f"need {self.layers + 1} pooling weights, got {len(pooling)}")
        if abs(sum(pooling) - 1.0) > 1e-12:
            raise ValueError("pooling weights must sum to 1")
        object.__setattr__(self, "pooling", pooling)

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.weights.matrix

    @property
    def num_users(self) -> int:
        if self.weights.num_users is None:
            raise ValueError("propagation weights do not record the user count")
        return self.weights.num_users

    @cached_property
    def transpose(self) -> sp.csr_matrix:
        return self.weights.matrix.T.tocsr()


def _check_embeddings(plan: PropagationPlan, embeddings: np.ndarray) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[1] < 1:
        raise ValueError("embeddings must be a 2-d array with at least one column")
    if embeddings.shape[0] != plan.matrix.shape[1]:
        raise ValueError(
            f"embedding rows {embeddings.shape[0]} do not match operator size {plan.matrix.shape[1]}"
        )
    return embeddings


def propagate_layers(plan: PropagationPlan, embeddings) -> list[np.ndarray]:
    """``[E^0, W E^0, ..., W^L E^0]``."""
    out = [_check_embeddings(plan, embeddings)]
    for _ in range(plan.layers):
        out.append(plan.matrix @ out[-1])
    return out


def pool(plan: PropagationPlan, layer_outputs) -> np.ndarray:
    pooled = plan.pooling[0] * layer_outputs[0]
    for beta, layer in zip(plan.pooling[1:], layer_outputs[1:]):
        pooled = pooled + beta * layer
    return pooled


def propagate(plan: PropagationPlan, embeddings) -> np.ndarray:
    """Pooled representation ``sum_l beta_l W^l E^0``."""
    return pool(plan, propagate_layers(plan, embeddings))


def propagate_transpose(plan: PropagationPlan, grad) -> np.ndarray:
    """Adjoint of :func:`propagate`: ``sum_l beta_l (W^T)^l G`` via Horner's rule."""
    acc = plan.pooling[-1] * grad
    for beta in reversed(plan.pooling[:-1]):
        acc = plan.transpose @ acc + beta * grad
    return acc


def score(user_emb, item_emb) -> float:
    user_emb = np.asarray(user_emb, dtype=np.float64)
    item_emb = np.asarray(item_emb, dtype=np.float64)
    if user_emb.shape != item_emb.shape:
        raise ValueError("embedding dimensions differ")
    return float(user_emb @ item_emb)


def _hop_sets(adj: list[np.ndarray], source: int, max_hop: int) -> list[set]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        p = queue.popleft()
        if dist[p] == max_hop:
            continue
        for q in adj[p]:
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(int(q))
    sets = [set() for _ in range(max_hop + 1)]
    for node, d in dist.items():
        sets[d].add(node)
    return sets


def _walk_weights(adj, coef, source: int, length: int) -> dict[int, float]:
    """Walk weights from ``source``, keyed by the node each walk ends at.

    Every walk of exactly ``length`` edges is enumerated by depth-first
    search and contributes the product of its edge coefficients.
    """
    totals: dict[int, float] = {}

    def dfs(node, remaining, weight):
        if remaining == 0:
            totals[node] = totals.get(node, 0.0) + weight
            return
        for q in adj[node]:
            dfs(int(q), remaining - 1, weight * coef[(node, int(q))])

    dfs(source, length, 1.0)
    return totals


def pathsum_ranking_oracle(graph: BipartiteGraph, embeddings, user: int, item: int,
                           layers: int, weights: PropagationWeights = None,
                           max_edges: int = 100) -> float:
    """Ranking score assembled path by path, without any matrix power.

    Node ``j`` at hop distance ``l1`` from the user contributes
    ``sum_{l2 >= l1} beta_l2 * alpha^{l2}_{ju} * e_j``, where ``alpha`` sums
    edge-coefficient products over every length-``l2`` walk between the two
    nodes (``alpha^0_{uu} = 1``). The item side is built the same way and the
    score is the inner product of the two sums. Walk coefficients default to
    ``(d_p d_q)^-1/2``.
    """
    if graph.num_edges > max_edges:
        raise GraphTooLargeError(
            f"path enumeration capped at {max_edges} edges, graph has {graph.num_edges}"
        )
    emb = np.asarray(embeddings, dtype=np.float64)
    mat = (weights.matrix if weights is not None else degree_symmetric_weights(graph)).tocsr()
    adj = [mat.indices[mat.indptr[p]:mat.indptr[p + 1]] for p in range(mat.shape[0])]
    # walk from center c outward: coefficient of step c->q is W[c, q]
    coef = {}
    for p in range(mat.shape[0]):
        for k in range(mat.indptr[p], mat.indptr[p + 1]):
            coef[(p, int(mat.indices[k]))] = float(mat.data[k])
    beta = 1.0 / (layers + 1)

    def side(center: int) -> np.ndarray:
        hops = _hop_sets(adj, center, layers)
        alphas = [_walk_weights(adj, coef, center, l2) for l2 in range(layers + 1)]
        total = np.zeros(emb.shape[1])
        for l1 in range(layers + 1):
            for j in sorted(hops[l1]):
                w = sum(beta * alphas[l2].get(j, 0.0) for l2 in range(l1, layers + 1))
                total += w * emb[j]
        return total

    return float(side(user) @ side(graph.num_users + item))


def save_embeddings(path, embeddings) -> None:
    """``EMB v1 <rows> <dim>`` header then row-major little-endian float32."""
    emb = np.asarray(embeddings)
    with Path(path).open("wb") as fh:
        fh.write(f"EMB v1 {emb.shape[0]} {emb.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())


def load_embeddings(path) -> np.ndarray:
    with Path(path).open("rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[:2] != ["EMB", "v1"]:
            raise ValueError(f"{path}: not an EMB v1 file")
        rows, dim = int(header[2]), int(header[3])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * dim:
        raise ValueError(f"{path}: expected {rows * dim} values, found {data.size}")
    return data.reshape(rows, dim).astype(np.float64)
