"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .graph import BipartiteGraph


def check_interactions(X, num_users: int = None, num_items: int = None) -> BipartiteGraph:
    """Coerce ``X`` into a :class:`BipartiteGraph`.

    Accepts a graph, a users x items sparse/dense matrix (nonzeros are
    edges), or an ``(n, 2)`` integer array of ``(user, item)`` pairs.
    """
    if isinstance(X, BipartiteGraph):
        if num_users is not None and X.num_users != num_users:
            raise ValueError(f"expected {num_users} users, got {X.num_users}")
        if num_items is not None and X.num_items != num_items:
            raise ValueError(f"expected {num_items} items, got {X.num_items}")
        return X
    if sp.issparse(X):
        mat = sp.csr_matrix(X)
        _check_shape(mat.shape, num_users, num_items)
        return BipartiteGraph.from_user_adj(mat != 0)
    arr = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=1)
    if arr.shape[1] == 2 and np.issubdtype(arr.dtype, np.integer):
        if (arr < 0).any():
            raise ValueError("user and item ids must be nonnegative")
        return BipartiteGraph.from_edges(arr[:, 0], arr[:, 1], num_users, num_items)
    arr = check_array(X, dtype=np.float64)
    _check_shape(arr.shape, num_users, num_items)
    return BipartiteGraph.from_user_adj(sp.csr_matrix(arr != 0))


def _check_shape(shape, num_users, num_items) -> None:
    if num_users is not None and shape[0] != num_users:
        raise ValueError(f"expected {num_users} user rows, got {shape[0]}")
    if num_items is not None and shape[1] != num_items:
        raise ValueError(f"expected {num_items} item columns, got {shape[1]}")


def check_ids(ids, upper: int, name: str = "user") -> np.ndarray:
    """1-d int64 array of ids in ``[0, upper)``; raises ``IndexError`` otherwise."""
    ids = np.atleast_1d(np.asarray(ids))
    if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"{name} ids must be a 1-d integer array")
    if ids.size and (ids.min() < 0 or ids.max() >= upper):
        raise IndexError(f"{name} id outside [0, {upper})")
    return ids.astype(np.int64)


def check_embeddings(embeddings, num_rows: int = None) -> np.ndarray:
    emb = check_array(embeddings, dtype=np.float64)
    if num_rows is not None and emb.shape[0] != num_rows:
        raise ValueError(f"expected {num_rows} embedding rows, got {emb.shape[0]}")
    return emb
