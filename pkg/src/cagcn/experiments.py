"""Edge-budget studies: keep a ranked fraction of training edges, then retrain or re-propagate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cir import CirConfig, CirMatrix, METRICS, compute_cir
from .evaluation import evaluate
from .graph import BipartiteGraph, DatasetSplit
from .seeding import stream_rng
from .training import TrainConfig, make_plan, propagate_pooled, train

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "cir")
SCOPES = ("local", "global")


def parse_budgets(text: str) -> tuple:
    """``"0.1:1.0:0.1"`` (inclusive range) or ``"0.4,0.6,0.8"``."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("budget step must be positive")
        count = int(round((stop - start) / step)) + 1
        return tuple(round(start + k * step, 10) for k in range(count))
    return tuple(float(x) for x in text.split(","))


@dataclass(frozen=True)
class EdgeBudgetPlan:
    """How edges are ranked and which fractions of them to keep.

    ``local`` cycles over users taking each one's next best edge per round;
    ``global`` ranks all edges at once. Budgets are fractions of the edge
    count; for a fixed strategy and seed every budget's edges contain the
    previous budget's.
    """

    strategy: str = "cir"
    metric: str = "lhn"
    scope: str = "local"
    budgets: tuple = tuple(round(0.1 * k, 10) for k in range(1, 11))
    seed: int = 42

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        budgets = tuple(float(b) for b in self.budgets)
        if not budgets or any(b <= 0 for b in budgets):
            raise ValueError("budgets must be positive fractions")
        if any(b >= a for a, b in zip(budgets[1:], budgets)):
            raise ValueError("budgets must be strictly ascending")
        object.__setattr__(self, "budgets", budgets)

    @property
    def label(self) -> str:
        return "random" if self.strategy == "random" else f"{self.metric}-{self.scope}"


def edge_order(graph: BipartiteGraph, cir: CirMatrix, plan: EdgeBudgetPlan) -> np.ndarray:
    """Positions into ``graph.edges()`` in the order edges are added."""
    users, items = graph.edges()
    if plan.strategy == "random":
        return stream_rng(plan.seed, "study").permutation(users.size)
    if cir is None:
        raise ValueError("the cir strategy needs a CirMatrix")
    phi = np.asarray(cir.weights[users, graph.num_users + items]).ravel()
    if plan.scope == "global":
        return np.lexsort((items, users, -phi))
    by_user = np.lexsort((items, -phi, users))
    starts = np.repeat(graph.user_adj.indptr[:-1], graph.user_degrees)
    rank = np.empty(users.size, dtype=np.int64)
    rank[by_user] = np.arange(users.size) - starts
    return np.lexsort((users, rank))


def budget_size(fraction: float, num_edges: int) -> int:
    if fraction > 1.0:
        logger.warning("budget %.3f exceeds the edge set; clamping to 1.0", fraction)
        fraction = 1.0
    return int(round(fraction * num_edges))


def select_edges(graph: BipartiteGraph, cir: CirMatrix, plan: EdgeBudgetPlan,
                 budget_index: int, order: np.ndarray = None) -> BipartiteGraph:
    """Graph over the same node set holding the first budget-many ranked edges."""
    if order is None:
        order = edge_order(graph, cir, plan)
    keep = np.sort(order[:budget_size(plan.budgets[budget_index], graph.num_edges)])
    users, items = graph.edges()
    return graph.subgraph(users[keep], items[keep])


@dataclass(frozen=True)
class CurvePoint:
    budget: float
    edges: int
    users: int
    recall: float
    ndcg: float
    final_loss: float = float("nan")


def _eval_users(dataset: DatasetSplit, budget_graph: BipartiteGraph, budget: float) -> np.ndarray:
    users = dataset.test_users()
    connected = budget_graph.user_degrees[users] > 0
    if not connected.all():
        logger.info("budget %.2f: excluding %d test users with no remaining edges",
                    budget, int((~connected).sum()))
    return users[connected]


def _ranking_cir(dataset: DatasetSplit, plan: EdgeBudgetPlan, cir: CirMatrix):
    if plan.strategy != "cir" or cir is not None:
        return cir
    return compute_cir(dataset.train, CirConfig(metric=plan.metric))


def run_retrain_study(dataset: DatasetSplit, config: TrainConfig, plan: EdgeBudgetPlan,
                      cir: CirMatrix = None) -> list[CurvePoint]:
    """Train from scratch on each budget graph and evaluate on the untouched test split."""
    cir = _ranking_cir(dataset, plan, cir)
    order = edge_order(dataset.train, cir, plan)
    curve = []
    for b, budget in enumerate(plan.budgets):
        sub = select_edges(dataset.train, cir, plan, b, order)
        result = train(dataset, config, graph=sub, evaluate_test=False)
        report = evaluate(result.representations, dataset, k=config.k,
                          users=_eval_users(dataset, sub, budget))
        curve.append(CurvePoint(budget, sub.num_edges, int(report.users.size), report.recall_mean,
                                report.ndcg_mean, result.losses[-1] if result.losses else float("nan")))
        logger.info("retrain %s budget %.2f recall %.4f", plan.label, budget, report.recall_mean)
    _log_dips(curve, plan)
    return curve


def run_pretrain_study(dataset: DatasetSplit, config: TrainConfig, plan: EdgeBudgetPlan,
                       pretrained, cir: CirMatrix = None) -> list[CurvePoint]:
    """Propagate frozen ego embeddings over each budget graph and evaluate."""
    pretrained = np.asarray(pretrained, dtype=np.float64)
    if pretrained.shape[0] != dataset.train.num_nodes:
        raise ValueError("pretrained embeddings do not match the dataset's node count")
    cir = _ranking_cir(dataset, plan, cir)
    order = edge_order(dataset.train, cir, plan)
    curve = []
    for b, budget in enumerate(plan.budgets):
        sub = select_edges(dataset.train, cir, plan, b, order)
        prop_plan, _, _ = make_plan(sub, config)
        report = evaluate(propagate_pooled(prop_plan, pretrained), dataset, k=config.k,
                          users=_eval_users(dataset, sub, budget))
        curve.append(CurvePoint(budget, sub.num_edges, int(report.users.size), report.recall_mean,
                                report.ndcg_mean))
        logger.info("pretrain %s budget %.2f recall %.4f", plan.label, budget, report.recall_mean)
    _log_dips(curve, plan)
    return curve


def _log_dips(curve, plan) -> None:
    for prev, cur in zip(curve, curve[1:]):
        if cur.recall < prev.recall:
            logger.info("%s: recall dips from %.4f to %.4f between budgets %.2f and %.2f",
                        plan.label, prev.recall, cur.recall, prev.budget, cur.budget)
