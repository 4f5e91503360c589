"""Sparse storage for the user-item interaction graph.

Users and items live in separate dense, 0-based id spaces. Wherever a single
node index is needed (embedding rows, the full adjacency), users come first
and item ``i`` maps to row ``num_users + i``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_SEPARATOR = re.compile(r"[ \t]+")


class DatasetFormatError(ValueError):
    """Raised for malformed interaction files."""


def _binary_csr(rows, cols, shape) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    mat = sp.csr_matrix(
        (np.ones(rows.size, dtype=np.float64), (rows, cols)), shape=shape
    )
    # coo->csr sums duplicates; clamp back to 0/1
    mat.sum_duplicates()
    mat.data[:] = 1.0
    mat.sort_indices()
    return mat


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Immutable bipartite graph held as two mutually transposed CSR matrices.

    ``user_adj`` is ``num_users x num_items`` and ``item_adj`` its transpose.
    Neighbor lists (CSR rows) are sorted and duplicate-free.
    """

    num_users: int
    num_items: int
    user_adj: sp.csr_matrix
    item_adj: sp.csr_matrix
    user_degrees: np.ndarray = field(repr=False)
    item_degrees: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, users, items, num_users=None, num_items=None) -> "BipartiteGraph":
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise ValueError("node ids must be nonnegative")
        if num_users is None:
            num_users = int(users.max()) + 1 if users.size else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.max() >= num_users or items.max() >= num_items):
            raise ValueError("edge endpoint outside the declared id space")
        user_adj = _binary_csr(users, items, (num_users, num_items))
        return cls.from_user_adj(user_adj)

    @classmethod
    def from_user_adj(cls, user_adj) -> "BipartiteGraph":
        user_adj = sp.csr_matrix(user_adj, dtype=np.float64)
        user_adj.sum_duplicates()
        user_adj.eliminate_zeros()
        user_adj.data[:] = 1.0
        user_adj.sort_indices()
        item_adj = user_adj.T.tocsr()
        item_adj.sort_indices()
        n, m = user_adj.shape
        return cls(
            num_users=int(n),
            num_items=int(m),
            user_adj=user_adj,
            item_adj=item_adj,
            user_degrees=np.diff(user_adj.indptr).astype(np.int64),
            item_degrees=np.diff(item_adj.indptr).astype(np.int64),
        )

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        return int(self.user_adj.nnz)

    @property
    def degrees(self) -> np.ndarray:
        """Degrees over the joint node index (users first)."""
        return np.concatenate([self.user_degrees, self.item_degrees])

    def user_neighbors(self, user: int) -> np.ndarray:
        if not 0 <= user < self.num_users:
            raise IndexError(f"user {user} out of range [0, {self.num_users})")
        a = self.user_adj
        return a.indices[a.indptr[user]:a.indptr[user + 1]]

    def item_neighbors(self, item: int) -> np.ndarray:
        if not 0 <= item < self.num_items:
            raise IndexError(f"item {item} out of range [0, {self.num_items})")
        a = self.item_adj
        return a.indices[a.indptr[item]:a.indptr[item + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """All ``(user, item)`` pairs in row-major (user, then item) order."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees)
        return users, self.user_adj.indices.astype(np.int64)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric ``(n+m) x (n+m)`` adjacency with users first."""
        ua, ia = self.user_adj, self.item_adj
        indptr = np.concatenate([ua.indptr, ua.nnz + ia.indptr[1:]]).astype(np.int64)
        indices = np.concatenate([ua.indices + self.num_users, ia.indices]).astype(np.int32)
        data = np.ones(indices.size)
        return sp.csr_matrix((data, indices, indptr), shape=(self.num_nodes,) * 2)

    def has_edge(self, user: int, item: int) -> bool:
        nbrs = self.user_neighbors(user)
        k = np.searchsorted(nbrs, item)
        return bool(k < nbrs.size and nbrs[k] == item)

    def subgraph(self, users, items) -> "BipartiteGraph":
        """Graph over the same id space keeping only the given edges."""
        return BipartiteGraph.from_edges(users, items, self.num_users, self.num_items)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: BipartiteGraph
    test_interactions: list  # per-user sorted np.ndarray of item ids

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def test_users(self) -> np.ndarray:
        return np.array(
            [u for u, items in enumerate(self.test_interactions) if len(items)],
            dtype=np.int64,
        )

    def num_test_interactions(self) -> int:
        return int(sum(len(t) for t in self.test_interactions))

    def test_graph(self) -> BipartiteGraph:
        users = np.concatenate(
            [np.full(len(t), u, dtype=np.int64) for u, t in enumerate(self.test_interactions)]
            or [np.empty(0, dtype=np.int64)]
        )
        items = np.concatenate(
            [np.asarray(t, dtype=np.int64) for t in self.test_interactions]
            or [np.empty(0, dtype=np.int64)]
        )
        return BipartiteGraph.from_edges(users, items, self.num_users, self.num_items)

    @classmethod
    def from_graphs(cls, train: BipartiteGraph, test: BipartiteGraph) -> "DatasetSplit":
        """Build a split from two graphs, dropping test pairs already in train."""
        test_lists = []
        dropped = 0
        for u in range(train.num_users):
            t = test.user_neighbors(u) if u < test.num_users else np.empty(0, np.int64)
            keep = ~np.isin(t, train.user_neighbors(u), assume_unique=True)
            dropped += int(t.size - keep.sum())
            test_lists.append(np.asarray(t[keep], dtype=np.int64))
        if dropped:
            logger.warning("dropped %d test interactions already present in train", dropped)
        return cls(train=train, test_interactions=test_lists)


def _read_interactions(path) -> tuple[np.ndarray, np.ndarray, int]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interaction file not found: {path}")
    users, items = [], []
    max_user = -1
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids = [int(tok) for tok in _SEPARATOR.split(line)]
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: non-integer token in {line!r}"
                ) from None
            if min(ids) < 0:
                raise DatasetFormatError(f"{path}:{lineno}: negative id in {line!r}")
            user, rest = ids[0], ids[1:]
            max_user = max(max_user, user)
            users.extend([user] * len(rest))
            items.extend(rest)
    return np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64), max_user


def load_dataset(train_path, test_path) -> DatasetSplit:
    """Read ``user item item ...`` train/test files into a :class:`DatasetSplit`.

    Id spaces are defined jointly by both files. Duplicate pairs inside a
    file collapse to one edge.
    """
    tr_u, tr_i, tr_max = _read_interactions(train_path)
    te_u, te_i, te_max = _read_interactions(test_path)
    if tr_u.size == 0:
        raise DatasetFormatError(f"{train_path}: no training interactions")
    num_users = max(tr_max, te_max) + 1
    num_items = int(max(tr_i.max(), te_i.max() if te_i.size else -1)) + 1
    train = BipartiteGraph.from_edges(tr_u, tr_i, num_users, num_items)
    test = BipartiteGraph.from_edges(te_u, te_i, num_users, num_items)
    return DatasetSplit.from_graphs(train, test)


def save_interactions(path, graph: BipartiteGraph) -> None:
    """Write ``graph`` in the ``user item item ...`` text format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for u in range(graph.num_users):
            items = graph.user_neighbors(u)
            if items.size:
                fh.write(" ".join([str(u)] + [str(int(i)) for i in items]) + "\n")


def save_dataset(directory, dataset: DatasetSplit) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train_path, test_path = directory / "train.txt", directory / "test.txt"
    save_interactions(train_path, dataset.train)
    save_interactions(test_path, dataset.test_graph())
    return train_path, test_path


def neighbors(graph: BipartiteGraph, node: int, kind: str = "user") -> np.ndarray:
    """Sorted neighbor ids of ``node``; ``kind`` is ``"user"`` or ``"item"``."""
    if kind == "user":
        return graph.user_neighbors(node)
    if kind == "item":
        return graph.item_neighbors(node)
    raise ValueError(f"kind must be 'user' or 'item', got {kind!r}")


def khop_path_counts(graph: BipartiteGraph, source_items, length: int) -> dict[int, int]:
    """Number of walks of ``length`` hops from any source item to each item.

    Walks alternate item-user-item, so ``length`` must be a positive even
    number; the counts come from repeated application of ``A_IU A_UI``.
    """
    if length <= 0 or length % 2:
        raise ValueError(f"walk length between items must be positive and even, got {length}")
    x = np.zeros(graph.num_items, dtype=np.int64)
    for i in np.atleast_1d(np.asarray(source_items, dtype=np.int64)):
        if not 0 <= i < graph.num_items:
            raise IndexError(f"item {i} out of range [0, {graph.num_items})")
        x[i] += 1
    ui = graph.user_adj.astype(np.int64)
    iu = graph.item_adj.astype(np.int64)
    for _ in range(length // 2):
        x = iu @ (ui @ x)
    nz = np.flatnonzero(x)
    return {int(i): int(x[i]) for i in nz}


def graph_stats(dataset: DatasetSplit) -> dict:
    """Users/items/interactions/density over train and test combined."""
    interactions = dataset.train.num_edges + dataset.num_test_interactions()
    n, m = dataset.num_users, dataset.num_items
    return {
        "users": n,
        "items": m,
        "interactions": interactions,
        "density": interactions / (n * m) if n and m else 0.0,
    }
