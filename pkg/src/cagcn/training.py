"""BPR training of linear graph recommenders with hand-derived gradients and Adam."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .cir import CirConfig, CirMatrix, build_propagation_weights, compute_cir
from .evaluation import evaluate
from .graph import BipartiteGraph, DatasetSplit
from .propagation import PropagationPlan, pool, propagate_layers, propagate_transpose
from .seeding import stream_rng

logger = logging.getLogger(__name__)

MODELS = ("mf", "lightgcn", "cagcn", "cagcn-star")
GAMMA_GRID = (1.0, 1.2, 1.5, 1.7, 2.0)
_MODEL_MODE = {"mf": "degree_sym", "lightgcn": "degree_sym", "cagcn": "cagcn", "cagcn-star": "cagcn_star"}


class TrainingDivergedError(FloatingPointError):
    """The training loss stopped being finite."""


@dataclass(frozen=True)
class TrainConfig:
    model: str = "lightgcn"
    epochs: int = 1000
    learning_rate: float = 1e-3
    l2_weight: float = 1e-4
    batch_size: int = 256
    embedding_dim: int = 64
    layers: int = 3
    gamma: float = 1.2
    seed: int = 42
    cir: CirConfig = field(default_factory=CirConfig)
    eval_every: int = 5
    k: int = 20

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("epochs", "batch_size", "embedding_dim", "eval_every", "k"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.layers < 0:
            raise ValueError("layers must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.l2_weight >= 0:
            raise ValueError("l2_weight must be nonnegative")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def mode(self) -> str:
        return _MODEL_MODE[self.model]

    @property
    def effective_layers(self) -> int:
        return 0 if self.model == "mf" else self.layers


class TrainTriple(NamedTuple):
    """``(user, positive, negative)``; fields may be scalars or equal-length arrays."""

    user: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def sample_negatives(graph: BipartiteGraph, rng: np.random.Generator) -> TrainTriple:
    """One triple per training edge, in shuffled order, with a uniform non-neighbor negative.

    Negatives are redrawn until they miss the user's training items. Users
    who interacted with every item have no valid negative and are skipped.
    """
    users, items = graph.edges()
    m = graph.num_items
    edge_keys = users * m + items  # row-major edge order keeps these sorted
    saturated = graph.user_degrees >= m
    if saturated.any() and users.size:
        keep = ~saturated[users]
        logger.warning("skipping %d users who interacted with every item", int(saturated.sum()))
        users, items = users[keep], items[keep]
    order = rng.permutation(users.size)
    users, items = users[order], items[order]
    negatives = rng.integers(0, max(m, 1), size=users.size)
    pending = np.arange(users.size)
    while pending.size:
        keys = users[pending] * m + negatives[pending]
        pos = np.searchsorted(edge_keys, keys)
        hit = (pos < edge_keys.size) & (edge_keys[np.minimum(pos, edge_keys.size - 1)] == keys)
        pending = pending[hit]
        negatives[pending] = rng.integers(0, m, size=pending.size)
    return TrainTriple(users, items, negatives.astype(np.int64))


def bpr_loss(y_pos, y_neg):
    """``-log sigmoid(y_pos - y_neg)`` computed as ``softplus(y_neg - y_pos)``."""
    return np.logaddexp(0.0, np.subtract(y_neg, y_pos))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _scatter_rows(rows, values, num_rows) -> np.ndarray:
    """Dense ``num_rows x d`` array with ``values[k]`` summed into row ``rows[k]``."""
    scatter = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))),
                            shape=(num_rows, rows.size))
    return scatter @ values


def _objective(triples: TrainTriple, plan: PropagationPlan, layer_outputs, l2_weight: float,
               need_grad: bool = True):
    num_users = plan.num_users
    users = np.asarray(triples.user, dtype=np.int64).ravel()
    pos = np.asarray(triples.positive, dtype=np.int64).ravel() + num_users
    neg = np.asarray(triples.negative, dtype=np.int64).ravel() + num_users
    size = users.size
    pooled = pool(plan, layer_outputs)
    ego = layer_outputs[0]
    eu, ep, en = pooled[users], pooled[pos], pooled[neg]
    with np.errstate(over="ignore", invalid="ignore"):
        delta = np.einsum("ij,ij->i", eu, ep - en)
        reg = (ego[users] ** 2).sum(1) + (ego[pos] ** 2).sum(1) + (ego[neg] ** 2).sum(1)
        loss = float(np.mean(bpr_loss(delta, 0.0) + l2_weight * reg))
    if not need_grad or not math.isfinite(loss):
        return loss, None
    coef = ((_sigmoid(delta) - 1.0) / size)[:, None]
    rows = np.concatenate([users, pos, neg])
    grad_pooled = _scatter_rows(rows, np.concatenate([coef * (ep - en), coef * eu, -coef * eu]),
                                pooled.shape[0])
    grad = propagate_transpose(plan, grad_pooled)
    grad += _scatter_rows(rows, (2.0 * l2_weight / size) * ego[rows], ego.shape[0])
    return loss, grad


def batch_loss(triples: TrainTriple, plan: PropagationPlan, layer_outputs, l2_weight: float) -> float:
    """Mean over triples of BPR loss plus ``l2_weight`` times the triple's squared ego norms."""
    return _objective(triples, plan, layer_outputs, l2_weight, need_grad=False)[0]


def backward(triples: TrainTriple, plan: PropagationPlan, layer_outputs, l2_weight: float) -> np.ndarray:
    """Exact gradient of :func:`batch_loss` with respect to the ego embeddings.

    The pooled-output gradient is pulled back through the linear
    propagation with the transposed operator.
    """
    return _objective(triples, plan, layer_outputs, l2_weight)[1]


class Adam:
    def __init__(self, shape, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Update ``params`` in place."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def init_embeddings(num_rows: int, dim: int, seed: int) -> np.ndarray:
    return stream_rng(seed, "init").normal(0.0, 0.1, size=(num_rows, dim))


def make_plan(graph: BipartiteGraph, config: TrainConfig, cir: CirMatrix = None) -> tuple:
    """Propagation plan for ``config.model``; returns ``(plan, cir, seconds)``.

    ``cir`` is computed when the model needs one and none is supplied.
    """
    start = time.perf_counter()
    mode = config.mode
    if mode != "degree_sym" and cir is None:
        cir = compute_cir(graph, config.cir)
    weights = build_propagation_weights(
        graph, cir, mode=mode, gamma=config.gamma if mode == "cagcn_star" else None
    )
    plan = PropagationPlan(weights=weights, layers=config.effective_layers)
    return plan, cir, time.perf_counter() - start


@dataclass(eq=False)
class TrainResult:
    config: TrainConfig
    embeddings: np.ndarray
    representations: np.ndarray
    best_embeddings: np.ndarray
    best_representations: np.ndarray
    best_epoch: int
    losses: list
    metrics: list
    preprocess_seconds: float
    training_seconds: float
    plan: PropagationPlan = None
    cir: CirMatrix = None


def train(dataset: DatasetSplit, config: TrainConfig, graph: BipartiteGraph = None,
          cir: CirMatrix = None, initial_embeddings=None, evaluate_test: bool = True,
          on_epoch: Callable = None) -> TrainResult:
    """Fit ego embeddings by mini-batch BPR with Adam.

    ``graph`` overrides the training graph (budgeted studies); evaluation
    always excludes the dataset's own training items. Every ``eval_every``
    epochs Recall@K / NDCG@K are logged and the best-recall checkpoint kept.
    """
    graph = graph if graph is not None else dataset.train
    plan, cir, preprocess_seconds = make_plan(graph, config, cir)
    if initial_embeddings is None:
        ego = init_embeddings(graph.num_nodes, config.embedding_dim, config.seed)
    else:
        ego = np.array(initial_embeddings, dtype=np.float64)
        if ego.shape != (graph.num_nodes, config.embedding_dim):
            raise ValueError(f"initial embeddings have shape {ego.shape}, expected "
                             f"{(graph.num_nodes, config.embedding_dim)}")
    sampler = stream_rng(config.seed, "sampling")
    adam = Adam(ego.shape, learning_rate=config.learning_rate)
    has_test = evaluate_test and dataset.num_test_interactions() > 0
    losses, metrics = [], []
    best = (-1.0, 0, ego.copy())
    elapsed = 0.0
    for epoch in range(1, config.epochs + 1):
        tick = time.perf_counter()
        triples = sample_negatives(graph, sampler)
        total, count = 0.0, triples.user.size
        for start in range(0, count, config.batch_size):
            sl = slice(start, start + config.batch_size)
            batch = TrainTriple(triples.user[sl], triples.positive[sl], triples.negative[sl])
            layers = propagate_layers(plan, ego)
            loss, grad = _objective(batch, plan, layers, config.l2_weight)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}; lower the learning rate "
                    f"(currently {config.learning_rate:g}) or the embedding scale"
                )
            total += loss * batch.user.size
            adam.step(ego, grad)
        epoch_loss = total / count if count else 0.0
        losses.append(epoch_loss)
        elapsed += time.perf_counter() - tick
        row = None
        if has_test and (epoch % config.eval_every == 0 or epoch == config.epochs):
            report = evaluate(propagate_pooled(plan, ego), dataset, k=config.k)
            row = {"epoch": epoch, "recall": report.recall_mean, "ndcg": report.ndcg_mean,
                   "wall_seconds": elapsed}
            metrics.append(row)
            if report.recall_mean > best[0]:
                best = (report.recall_mean, epoch, ego.copy())
            logger.info("epoch %d loss %.6f recall@%d %.4f ndcg@%d %.4f", epoch, epoch_loss,
                        config.k, report.recall_mean, config.k, report.ndcg_mean)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, row)
    if best[0] < 0:
        best = (0.0, config.epochs, ego.copy())
    return TrainResult(
        config=config,
        embeddings=ego,
        representations=propagate_pooled(plan, ego),
        best_embeddings=best[2],
        best_representations=propagate_pooled(plan, best[2]),
        best_epoch=best[1],
        losses=losses,
        metrics=metrics,
        preprocess_seconds=preprocess_seconds,
        training_seconds=elapsed,
        plan=plan,
        cir=cir,
    )


def propagate_pooled(plan: PropagationPlan, ego) -> np.ndarray:
    return pool(plan, propagate_layers(plan, ego))
