"""Synthetic implicit-feedback data shaped like small public benchmarks."""

from __future__ import annotations

import numpy as np

from .graph import BipartiteGraph, DatasetSplit
from .seeding import stream_rng


def community_interactions(num_users: int = 943, num_items: int = 1682, mean_degree: float = 106.0,
                           min_degree: int = 20, communities: int = 40, noise: float = 0.3,
                           popularity_exponent: float = 0.8, seed: int = 0) -> BipartiteGraph:
    """Users and items grouped into taste communities, plus uniform noise.

    Each user belongs to a primary and a secondary community. An interaction
    picks an item from one of them (weighted by a Zipf-like popularity), or
    with probability ``noise`` an item uniformly at random. User degrees are
    lognormal around ``mean_degree`` and at least ``min_degree``.
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    if min_degree > num_items:
        raise ValueError("min_degree cannot exceed the number of items")
    rng = stream_rng(seed, "synthetic")
    item_comm = rng.integers(0, communities, size=num_items)
    rank = rng.permutation(num_items) + 1
    popularity = rank.astype(float) ** -popularity_exponent
    members = [np.flatnonzero(item_comm == c) for c in range(communities)]
    probs = [popularity[idx] / popularity[idx].sum() for idx in members]
    primary = rng.integers(0, communities, size=num_users)
    secondary = (primary + rng.integers(1, communities, size=num_users)) % communities
    sigma = 0.8
    mu = np.log(max(mean_degree - min_degree, 1.0)) - sigma ** 2 / 2
    degrees = np.minimum(min_degree + rng.lognormal(mu, sigma, size=num_users).astype(int),
                         num_items // 2)
    users, items = [], []
    for u in range(num_users):
        chosen: set = set()
        target = int(degrees[u])
        while len(chosen) < target:
            r = rng.random()
            if r < noise:
                j = int(rng.integers(0, num_items))
            else:
                c = primary[u] if r < noise + (1.0 - noise) * 0.7 else secondary[u]
                j = int(rng.choice(members[c], p=probs[c]))
            chosen.add(j)
        users.extend([u] * target)
        items.extend(sorted(chosen))
    return BipartiteGraph.from_edges(users, items, num_users, num_items)


def split_per_user(graph: BipartiteGraph, test_fraction: float = 0.2, seed: int = 0) -> DatasetSplit:
    """Hold out ``test_fraction`` of each user's items (at least one train item kept)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = stream_rng(seed, "split")
    tr_u, tr_i, test = [], [], []
    for u in range(graph.num_users):
        items = graph.user_neighbors(u).astype(np.int64)
        perm = rng.permutation(items.size)
        n_test = min(int(round(test_fraction * items.size)), max(items.size - 1, 0))
        test.append(np.sort(items[perm[:n_test]]))
        keep = np.sort(items[perm[n_test:]])
        tr_u.extend([u] * keep.size)
        tr_i.extend(keep.tolist())
    train = BipartiteGraph.from_edges(tr_u, tr_i, graph.num_users, graph.num_items)
    return DatasetSplit(train=train, test_interactions=test)


def desk_dataset(seed: int = 0, **kwargs) -> DatasetSplit:
    """MovieLens-100K-sized split: 943 users, 1682 items, about 100k interactions."""
    return split_per_user(community_interactions(seed=seed, **kwargs), 0.2, seed=seed)
