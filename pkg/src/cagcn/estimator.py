"""scikit-learn style wrappers around CIR computation and model training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cir import CirConfig, compute_cir
from .evaluation import evaluate, top_k
from .graph import DatasetSplit
from .training import TrainConfig, make_plan, propagate_pooled, train
from .validation import check_ids, check_interactions


class CommonInteractedRatio(TransformerMixin, BaseEstimator):
    """Maps an interaction matrix to its sparse ``(n+m) x (n+m)`` CIR edge-weight matrix."""

    def __init__(self, metric="jc", hops=1, hop_importances=None, include_self=True):
        self.metric = metric
        self.hops = hops
        self.hop_importances = hop_importances
        self.include_self = include_self

    def _config(self) -> CirConfig:
        return CirConfig(metric=self.metric, hops=self.hops,
                         hop_importances=self.hop_importances, include_self=self.include_self)

    def fit(self, X, y=None):
        graph = check_interactions(X)
        self.config_ = self._config()
        self.n_users_, self.n_items_ = graph.num_users, graph.num_items
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        graph = check_interactions(X, self.n_users_, self.n_items_)
        return compute_cir(graph, self.config_).weights


class CAGCNRecommender(BaseEstimator):
    """Linear graph recommender (MF, LightGCN, CAGCN or CAGCN*) fit by BPR.

    ``fit`` takes training interactions; ``predict`` returns each requested
    user's top items among those not seen in training.
    """

    def __init__(self, model="cagcn-star", metric="jc", gamma=1.2, layers=3, embedding_dim=64,
                 epochs=1000, learning_rate=1e-3, l2_weight=1e-4, batch_size=256, hops=1,
                 include_self=True, n_recommendations=20, random_state=42):
        self.model = model
        self.metric = metric
        self.gamma = gamma
        self.layers = layers
        self.embedding_dim = embedding_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2_weight = l2_weight
        self.batch_size = batch_size
        self.hops = hops
        self.include_self = include_self
        self.n_recommendations = n_recommendations
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            model=self.model, epochs=self.epochs, learning_rate=self.learning_rate,
            l2_weight=self.l2_weight, batch_size=self.batch_size, embedding_dim=self.embedding_dim,
            layers=self.layers, gamma=self.gamma, seed=self.random_state, k=self.n_recommendations,
            cir=CirConfig(metric=self.metric, hops=self.hops, include_self=self.include_self),
        )

    def fit(self, X, y=None):
        graph = check_interactions(X)
        dataset = DatasetSplit(train=graph, test_interactions=[np.empty(0, np.int64)] * graph.num_users)
        result = train(dataset, self._train_config(), evaluate_test=False)
        self.train_graph_ = graph
        self.n_users_, self.n_items_ = graph.num_users, graph.num_items
        self.embeddings_ = result.embeddings
        self.representations_ = result.representations
        self.loss_curve_ = list(result.losses)
        return self

    def transform(self, X):
        """Pooled representations from the fitted ego embeddings propagated over ``X``."""
        check_is_fitted(self, "embeddings_")
        graph = check_interactions(X, self.n_users_, self.n_items_)
        plan, _, _ = make_plan(graph, self._train_config())
        return propagate_pooled(plan, self.embeddings_)

    def decision_function(self, users, items) -> np.ndarray:
        """Inner-product scores for aligned ``users`` and ``items`` arrays."""
        check_is_fitted(self, "representations_")
        users = check_ids(users, self.n_users_, "user")
        items = check_ids(items, self.n_items_, "item")
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        reps = self.representations_
        return np.einsum("ij,ij->i", reps[users], reps[self.n_users_ + items])

    def predict(self, users) -> np.ndarray:
        """``(len(users), n_recommendations)`` item ids, best first; short rows padded with -1."""
        check_is_fitted(self, "representations_")
        users = check_ids(users, self.n_users_, "user")
        k = self.n_recommendations
        reps = self.representations_
        scores = reps[users] @ reps[self.n_users_:].T
        seen = self.train_graph_.user_adj[users].tocoo()
        scores[seen.row, seen.col] = -np.inf
        out = np.full((users.size, k), -1, dtype=np.int64)
        for row in range(users.size):
            ranked = top_k(scores[row], k)
            out[row, :ranked.size] = ranked
        return out

    def score(self, X, y=None) -> float:
        """Mean Recall@``n_recommendations`` on held-out interactions ``X``."""
        check_is_fitted(self, "representations_")
        test = check_interactions(X, self.n_users_, self.n_items_)
        dataset = DatasetSplit.from_graphs(self.train_graph_, test)
        return evaluate(self.representations_, dataset, k=self.n_recommendations).recall_mean
