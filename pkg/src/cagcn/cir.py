"""Common Interacted Ratio edge weights and the propagation operators built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import BipartiteGraph

METRICS = ("jc", "sc", "cn", "lhn")
MODES = ("degree_sym", "cagcn", "cagcn_star")


@dataclass(frozen=True)
class CirConfig:
    """Which overlap metric, how many hops, and per-hop path importances.

    ``include_self`` controls whether the ``i == j`` term (walks ``j -> k -> j``)
    contributes to a neighbor's own score.
    """

    metric: str = "jc"
    hops: int = 1
    hop_importances: tuple = None
    include_self: bool = True

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if int(self.hops) != self.hops or self.hops < 1:
            raise ValueError(f"hops must be a positive integer, got {self.hops!r}")
        alphas = self.hop_importances
        if alphas is None:
            alphas = (1.0,) * self.hops
        alphas = tuple(float(a) for a in alphas)
        if len(alphas) != self.hops:
            raise ValueError(f"need {self.hops} hop importances, got {len(alphas)}")
        if not all(math.isfinite(a) and a >= 0 for a in alphas):
            raise ValueError("hop importances must be finite and nonnegative")
        object.__setattr__(self, "hops", int(self.hops))
        object.__setattr__(self, "hop_importances", alphas)


@dataclass(frozen=True, eq=False)
class CirMatrix:
    """Sparse ``Phi`` over all nodes (users first), sharing the adjacency pattern.

    Row ``p`` holds ``phi_p(q)`` for each neighbor ``q``; the matrix is not
    symmetric in general.
    """

    weights: sp.csr_matrix
    config: CirConfig = field(default_factory=CirConfig)


@dataclass(frozen=True, eq=False)
class PropagationWeights:
    """Per-edge message coefficients; ``matrix[p, q]`` scales messages ``q -> p``."""

    matrix: sp.csr_matrix
    mode: str = "degree_sym"
    gamma: float = None
    num_users: int = None

    @property
    def shape(self):
        return self.matrix.shape


def _metric_from_counts(metric: str, inter, deg_a, deg_b):
    """Vectorized overlap metric from intersection sizes and degrees.

    Zero denominators (only possible with a degree-0 node) give 0.
    """
    inter = np.asarray(inter, dtype=np.float64)
    deg_a = np.asarray(deg_a, dtype=np.float64)
    deg_b = np.asarray(deg_b, dtype=np.float64)
    if metric == "cn":
        return inter + 0.0 * (deg_a + deg_b)
    if metric == "jc":
        denom = deg_a + deg_b - inter
    elif metric == "sc":
        denom = np.sqrt(deg_a * deg_b)
    elif metric == "lhn":
        denom = deg_a * deg_b
    else:
        raise ValueError(f"unknown metric {metric!r}")
    out = np.zeros(np.broadcast(inter, denom).shape)
    np.divide(inter, denom, out=out, where=denom > 0)
    return out


def pairwise_metric(graph: BipartiteGraph, a: int, b: int, metric: str, kind: str = "item") -> float:
    """Overlap between the neighborhoods of two same-side nodes.

    ``kind="item"`` compares two items by their user sets, ``kind="user"``
    two users by their item sets.
    """
    if kind == "item":
        na, nb = graph.item_neighbors(a), graph.item_neighbors(b)
    elif kind == "user":
        na, nb = graph.user_neighbors(a), graph.user_neighbors(b)
    else:
        raise ValueError(f"kind must be 'user' or 'item', got {kind!r}")
    inter = np.intersect1d(na, nb, assume_unique=True).size
    return float(_metric_from_counts(metric, inter, na.size, nb.size))


def _one_hop_side(center_adj: sp.csr_matrix, nbr_adj: sp.csr_matrix, metric: str,
                  include_self: bool) -> np.ndarray:
    """Mean pairwise metric of each neighbor against its center's neighborhood.

    Returns values aligned with ``center_adj.data``. Only the neighborhood
    block is formed per center, never the full co-occurrence matrix.
    """
    out = np.zeros(center_adj.nnz, dtype=np.float64)
    nbr_deg = np.diff(nbr_adj.indptr)
    indptr, indices = center_adj.indptr, center_adj.indices
    for c in range(center_adj.shape[0]):
        lo, hi = indptr[c], indptr[c + 1]
        if lo == hi:
            continue
        nbrs = indices[lo:hi]
        block = nbr_adj[nbrs]
        inter = (block @ block.T).toarray()
        deg = nbr_deg[nbrs]
        scores = _metric_from_counts(metric, inter, deg[:, None], deg[None, :])
        if not include_self:
            np.fill_diagonal(scores, 0.0)
        out[lo:hi] = scores.sum(axis=0) / (hi - lo)
    return out


def _multi_hop_side(center_adj: sp.csr_matrix, nbr_adj: sp.csr_matrix,
                    alphas) -> np.ndarray:
    """Hops ``l >= 2``: each length-``2l`` walk weighs 1/prod(intermediate degrees).

    With ``Q = N^T D_c^-1 N`` (neighbor-side walks of length 2 divided by the
    middle node's degree), length-``2l`` walk weights are ``Q (D_n^-1 Q)^(l-1)``.
    """
    out = np.zeros(center_adj.nnz, dtype=np.float64)
    if len(alphas) < 2:
        return out
    center_deg = np.diff(center_adj.indptr).astype(np.float64)
    nbr_deg = np.diff(nbr_adj.indptr).astype(np.float64)
    inv_c = sp.diags(np.divide(1.0, center_deg, out=np.zeros_like(center_deg), where=center_deg > 0))
    inv_n = sp.diags(np.divide(1.0, nbr_deg, out=np.zeros_like(nbr_deg), where=nbr_deg > 0))
    q = (nbr_adj @ inv_c @ center_adj).tocsr()
    step = (inv_n @ q).tocsr()
    rows = np.repeat(np.arange(center_adj.shape[0]), np.diff(center_adj.indptr))
    cols = center_adj.indices
    mass = (center_adj @ q).tocsr()
    for alpha in alphas[1:]:
        mass = (mass @ step).tocsr()
        if alpha:
            out += alpha * np.asarray(mass[rows, cols]).ravel()
    return out / np.maximum(center_deg[rows], 1.0)


def _side_values(center_adj, nbr_adj, config: CirConfig) -> np.ndarray:
    vals = config.hop_importances[0] * _one_hop_side(
        center_adj, nbr_adj, config.metric, config.include_self
    )
    if config.hops > 1:
        vals = vals + _multi_hop_side(center_adj, nbr_adj, config.hop_importances)
    return vals


def compute_cir(graph: BipartiteGraph, config: CirConfig = None) -> CirMatrix:
    """Materialize ``Phi`` for every edge, user-centric and item-centric.

    For a user ``u`` and item ``j`` in its neighborhood,
    ``Phi[u, j] = alpha_1 / |N_u| * sum_{i in N_u} metric(i, j)`` plus the
    walk-based terms for further hops. ``include_self`` only affects the
    metric term; multi-hop walks always count closed walks. Item rows are
    computed the same way with users and items swapped.
    """
    config = config or CirConfig()
    user_vals = _side_values(graph.user_adj, graph.item_adj, config)
    item_vals = _side_values(graph.item_adj, graph.user_adj, config)
    return CirMatrix(weights=joint_matrix(graph, user_vals, item_vals), config=config)


def joint_matrix(graph: BipartiteGraph, user_rows, item_rows) -> sp.csr_matrix:
    """``(n+m)^2`` CSR on the adjacency pattern from per-edge block values.

    ``user_rows`` aligns with ``graph.user_adj.data`` and ``item_rows`` with
    ``graph.item_adj.data``.
    """
    ua, ia = graph.user_adj, graph.item_adj
    n = graph.num_users
    indptr = np.concatenate([ua.indptr, ua.nnz + ia.indptr[1:]]).astype(np.int64)
    indices = np.concatenate([ua.indices + n, ia.indices]).astype(np.int32)
    data = np.concatenate([np.asarray(user_rows, float), np.asarray(item_rows, float)])
    size = graph.num_nodes
    return sp.csr_matrix((data, indices, indptr), shape=(size, size))


def _with_pattern(pattern: sp.csr_matrix, values: sp.csr_matrix) -> sp.csr_matrix:
    """Copy of ``pattern`` whose data are the matching entries of ``values``."""
    rows = np.repeat(np.arange(pattern.shape[0]), np.diff(pattern.indptr))
    data = np.asarray(values[rows, pattern.indices]).ravel().astype(np.float64)
    return sp.csr_matrix((data, pattern.indices.copy(), pattern.indptr.copy()), shape=pattern.shape)


def degree_symmetric_weights(graph: BipartiteGraph) -> sp.csr_matrix:
    """LightGCN operator: entry ``(p, q)`` is ``d_p^-1/2 d_q^-1/2``."""
    du = 1.0 / np.sqrt(np.maximum(graph.user_degrees, 1))
    di = 1.0 / np.sqrt(np.maximum(graph.item_degrees, 1))
    u, i = graph.edges()
    vals = du[u] * di[i]
    ia = graph.item_adj
    items = np.repeat(np.arange(graph.num_items), graph.item_degrees)
    return joint_matrix(graph, vals, di[items] * du[ia.indices])


def _row_sums(mat: sp.csr_matrix) -> np.ndarray:
    rows = np.repeat(np.arange(mat.shape[0]), np.diff(mat.indptr))
    return np.bincount(rows, weights=mat.data, minlength=mat.shape[0])


def build_propagation_weights(graph: BipartiteGraph, cir: CirMatrix = None,
                              mode: str = "degree_sym", gamma: float = None) -> PropagationWeights:
    """Edge coefficients for LightGCN (``degree_sym``), CAGCN, or CAGCN*.

    ``cagcn`` rescales each row's normalized CIR shares to the row mass of
    the degree-symmetric operator; ``cagcn_star`` adds ``gamma`` times the
    shares on top of the degree-symmetric weights. Rows whose ``Phi`` sums
    to zero fall back to degree-symmetric weights in both modes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    base = degree_symmetric_weights(graph)
    if mode == "degree_sym":
        return PropagationWeights(matrix=base, mode=mode, num_users=graph.num_users)
    if cir is None:
        raise ValueError(f"mode {mode!r} requires a CirMatrix")
    if mode == "cagcn_star":
        if gamma is None:
            raise ValueError("cagcn_star requires gamma")
        if not gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {gamma}")
    phi = cir.weights
    if phi.shape != base.shape or phi.nnz != base.nnz or not (
        np.array_equal(phi.indptr, base.indptr) and np.array_equal(phi.indices, base.indices)
    ):
        phi = _with_pattern(base, phi)
    nrows = base.shape[0]
    rows = np.repeat(np.arange(nrows), np.diff(base.indptr))
    phi_mass = _row_sums(phi)
    has_mass = phi_mass[rows] > 0
    share = np.zeros(base.nnz)
    np.divide(phi.data, phi_mass[rows], out=share, where=has_mass)
    if mode == "cagcn":
        row_mass = _row_sums(base)
        data = np.where(has_mass, row_mass[rows] * share, base.data)
        gamma = None
    else:
        gamma = float(gamma)
        data = gamma * share + base.data
    matrix = sp.csr_matrix((data, base.indices.copy(), base.indptr.copy()), shape=base.shape)
    return PropagationWeights(matrix=matrix, mode=mode, gamma=gamma, num_users=graph.num_users)


def save_cir(path, cir: CirMatrix) -> None:
    """Header line then little-endian CSR: int64 offsets, int32 columns, float64 values."""
    w = cir.weights.tocsr()
    header = f"CIR v1 {cir.config.metric} {cir.config.hops} {w.shape[0]} {w.nnz}\n"
    with Path(path).open("wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(w.indptr, dtype="<i8").tobytes())
        fh.write(np.asarray(w.indices, dtype="<i4").tobytes())
        fh.write(np.asarray(w.data, dtype="<f8").tobytes())


def load_cir(path) -> CirMatrix:
    with Path(path).open("rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 6 or header[:2] != ["CIR", "v1"]:
            raise ValueError(f"{path}: not a CIR v1 file")
        metric, hops, nrows, nnz = header[2], int(header[3]), int(header[4]), int(header[5])
        indptr = np.frombuffer(fh.read(8 * (nrows + 1)), dtype="<i8")
        indices = np.frombuffer(fh.read(4 * nnz), dtype="<i4")
        data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    if indptr.size != nrows + 1 or indices.size != nnz or data.size != nnz:
        raise ValueError(f"{path}: truncated CIR file")
    weights = sp.csr_matrix(
        (data.astype(np.float64), indices.astype(np.int32), indptr.astype(np.int64)),
        shape=(nrows, nrows),
    )
    return CirMatrix(weights=weights, config=CirConfig(metric=metric, hops=hops))
