"""Full-catalog top-K evaluation and ranking-agreement analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cir import CirConfig, METRICS, _metric_from_counts
from .graph import BipartiteGraph, DatasetSplit


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray
    k: int


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Per-user Recall@K and NDCG@K over users with a nonempty test set."""

    k: int
    users: np.ndarray
    recall: np.ndarray
    ndcg: np.ndarray

    @property
    def recall_mean(self) -> float:
        return float(self.recall.mean()) if self.recall.size else 0.0

    @property
    def ndcg_mean(self) -> float:
        return float(self.ndcg.mean()) if self.ndcg.size else 0.0

    def summary(self) -> dict:
        return {
            "users": int(self.users.size),
            f"recall@{self.k}": self.recall_mean,
            f"ndcg@{self.k}": self.ndcg_mean,
        }


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest finite scores, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(scores)
    k_eff = min(int(k), int(finite.sum()))
    if k_eff <= 0:
        return np.empty(0, dtype=np.int64)
    masked = np.where(finite, scores, -np.inf)
    if k_eff < masked.size:
        part = np.argpartition(-masked, k_eff - 1)[:k_eff]
        threshold = masked[part].min()
        cand = np.flatnonzero(masked >= threshold)
    else:
        cand = np.flatnonzero(finite)
    order = np.lexsort((cand, -masked[cand]))
    return cand[order][:k_eff].astype(np.int64)


def _score_blocks(representations, graph: BipartiteGraph, users, exclude: BipartiteGraph,
                  block_size: int):
    reps = np.asarray(representations, dtype=np.float64)
    n = graph.num_users
    item_reps = reps[n:n + graph.num_items]
    for start in range(0, len(users), block_size):
        block = np.asarray(users[start:start + block_size], dtype=np.int64)
        scores = reps[block] @ item_reps.T
        seen = exclude.user_adj[block].tocoo()
        scores[seen.row, seen.col] = -np.inf
        yield block, scores


def rank_all(representations, dataset: DatasetSplit, k: int = 20, exclude: BipartiteGraph = None,
             block_size: int = 512) -> list[RankedList]:
    """Top-``k`` non-training items for every user with a nonempty test set."""
    if k < 1:
        raise ValueError("k must be at least 1")
    exclude = exclude if exclude is not None else dataset.train
    out = []
    for block, scores in _score_blocks(representations, dataset.train, dataset.test_users(),
                                       exclude, block_size):
        for row, user in enumerate(block):
            out.append(RankedList(user=int(user), items=top_k(scores[row], k), k=k))
    return out


def recall_at_k(ranked, truth) -> float:
    items = ranked.items if isinstance(ranked, RankedList) else np.asarray(ranked)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("recall is undefined for an empty truth set")
    return float(np.isin(items, truth).sum()) / truth.size


def ndcg_at_k(ranked, truth, k: int = None) -> float:
    """Binary-relevance NDCG with a ``log2(rank + 1)`` discount."""
    items = ranked.items if isinstance(ranked, RankedList) else np.asarray(ranked)
    if k is None:
        k = ranked.k if isinstance(ranked, RankedList) else len(items)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("ndcg is undefined for an empty truth set")
    items = items[:k]
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    hits = np.isin(items, truth)
    dcg = float(discounts[:items.size][hits].sum())
    idcg = float(discounts[:min(k, truth.size)].sum())
    return dcg / idcg


def evaluate(representations, dataset: DatasetSplit, k: int = 20, exclude: BipartiteGraph = None,
             users=None, block_size: int = 512) -> MetricReport:
    """Mean Recall@K / NDCG@K with every non-training item as a candidate."""
    exclude = exclude if exclude is not None else dataset.train
    if users is None:
        users = dataset.test_users()
    users = np.asarray(users, dtype=np.int64)
    recalls = np.empty(users.size)
    ndcgs = np.empty(users.size)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    pos = 0
    for block, scores in _score_blocks(representations, dataset.train, users, exclude, block_size):
        for row, user in enumerate(block):
            truth = dataset.test_interactions[user]
            ranked = top_k(scores[row], k)
            hits = np.isin(ranked, truth)
            recalls[pos] = hits.sum() / len(truth)
            ndcgs[pos] = discounts[:ranked.size][hits].sum() / discounts[:min(k, len(truth))].sum()
            pos += 1
    return MetricReport(k=k, users=users, recall=recalls, ndcg=ndcgs)


def bucket_label(lo, hi) -> str:
    return f"[{lo},{'inf' if hi is None else hi})"


def degree_grouped_report(report: MetricReport, graph: BipartiteGraph, bucket_edges=(0, 300)) -> dict:
    """Per-bucket means keyed by ``[lo,hi)`` labels on users' training degree.

    Buckets with no users are left out rather than reported as zero.
    """
    edges = [int(e) for e in bucket_edges]
    if not edges or edges[0] != 0 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must start at 0 and increase strictly")
    bounds = list(zip(edges, edges[1:] + [None]))
    deg = graph.user_degrees[report.users]
    out = {}
    for lo, hi in bounds:
        mask = deg >= lo if hi is None else (deg >= lo) & (deg < hi)
        if not mask.any():
            continue
        out[bucket_label(lo, hi)] = {
            "users": int(mask.sum()),
            "recall_mean": float(report.recall[mask].mean()),
            "recall_std": float(report.recall[mask].std()),
            "ndcg_mean": float(report.ndcg[mask].mean()),
            "ndcg_std": float(report.ndcg[mask].std()),
        }
    return out


def rbo(list_a, list_b, p: float = 0.9) -> float:
    """Extrapolated rank-biased overlap, evaluated to the shorter list's depth.

    ``(1 - p) * sum_d p^(d-1) A_d + p^k A_k`` with ``A_d`` the fraction of
    shared items among the two depth-``d`` prefixes.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"persistence p must lie in (0, 1), got {p}")
    a, b = list(list_a), list(list_b)
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise ValueError("ranked lists must be duplicate-free")
    depth = min(len(a), len(b))
    if depth == 0:
        return 0.0
    if a[:depth] == b[:depth]:
        return 1.0
    seen_a, seen_b = set(), set()
    overlap = 0
    terms = []
    agreement = 0.0
    for d in range(1, depth + 1):
        x, y = a[d - 1], b[d - 1]
        if x == y:
            overlap += 1
        else:
            overlap += (x in seen_b) + (y in seen_a)
        seen_a.add(x)
        seen_b.add(y)
        agreement = overlap / d
        terms.append((1.0 - p) * p ** (d - 1) * agreement)
    terms.append(p ** depth * agreement)
    return min(1.0, max(0.0, math.fsum(terms)))


def _rank_by_affinity(item_adj, item_deg, nbrs, reference, metric, include_self):
    if reference.size == 0:
        return None
    inter = (item_adj[reference] @ item_adj[nbrs].T).toarray()
    scores = _metric_from_counts(metric, inter, item_deg[reference][:, None], item_deg[nbrs][None, :])
    if not include_self:
        scores[reference[:, None] == nbrs[None, :]] = 0.0
    phi = scores.mean(axis=0)
    return nbrs[np.lexsort((nbrs, -phi))]


def cir_ranking_agreement(dataset: DatasetSplit, config: CirConfig = None, p: float = 0.9,
                          metrics=METRICS, neighborhoods: str = "full") -> dict:
    """RBO between neighbor rankings by CIR against train, test and full neighborhoods.

    Each user's training neighbors are ranked by their mean affinity to
    (a) the training neighborhood, (b) the held-out neighborhood and (c)
    their union. Item-item affinities come from the train-plus-test graph
    (``neighborhoods="full"``) so a held-out item shares its user with the
    ranked items just as a training item does; ``"train"`` uses training
    edges only. Users with fewer than two training neighbors or no test
    items are skipped.
    """
    config = config or CirConfig()
    train = dataset.train
    if neighborhoods == "full":
        joint = (train.user_adj + dataset.test_graph().user_adj) > 0
        affinity_graph = BipartiteGraph.from_user_adj(joint)
    elif neighborhoods == "train":
        affinity_graph = train
    else:
        raise ValueError(f"neighborhoods must be 'full' or 'train', got {neighborhoods!r}")
    item_adj = affinity_graph.item_adj
    item_deg = affinity_graph.item_degrees
    results = {m: {"train_test": [], "train_full": []} for m in metrics}
    users = []
    for u in range(train.num_users):
        nbrs = train.user_neighbors(u).astype(np.int64)
        test = np.asarray(dataset.test_interactions[u], dtype=np.int64)
        if nbrs.size < 2 or test.size == 0:
            continue
        users.append(u)
        full = np.union1d(nbrs, test)
        for m in metrics:
            r_train = _rank_by_affinity(item_adj, item_deg, nbrs, nbrs, m, config.include_self)
            r_test = _rank_by_affinity(item_adj, item_deg, nbrs, test, m, config.include_self)
            r_full = _rank_by_affinity(item_adj, item_deg, nbrs, full, m, config.include_self)
            results[m]["train_test"].append(rbo(r_train.tolist(), r_test.tolist(), p))
            results[m]["train_full"].append(rbo(r_train.tolist(), r_full.tolist(), p))
    out = {}
    for m in metrics:
        tt = np.asarray(results[m]["train_test"])
        tf = np.asarray(results[m]["train_full"])
        out[m] = {
            "users": len(users),
            "train_test_mean": float(tt.mean()) if tt.size else float("nan"),
            "train_test_std": float(tt.std()) if tt.size else float("nan"),
            "train_full_mean": float(tf.mean()) if tf.size else float("nan"),
            "train_full_std": float(tf.std()) if tf.size else float("nan"),
        }
    return out
