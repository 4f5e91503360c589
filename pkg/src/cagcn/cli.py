"""Command-line entry point: ``cagcn <subcommand> [options]``.

Options may also come from a ``key=value`` file given with ``--config``;
keys are long option names without the leading dashes. Explicit flags win
over the file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .cir import METRICS, CirConfig, compute_cir, load_cir, save_cir
from .datasets import desk_dataset
from .evaluation import cir_ranking_agreement, degree_grouped_report, evaluate
from .experiments import EdgeBudgetPlan, parse_budgets, run_pretrain_study, run_retrain_study
from .expressiveness import distinguishing_test
from .graph import DatasetFormatError, graph_stats, load_dataset, save_dataset
from .propagation import load_embeddings, save_embeddings
from .training import MODELS, TrainConfig, TrainingDivergedError, train

logger = logging.getLogger("cagcn")

SUBCOMMANDS = ("stats", "cir", "train", "evaluate", "study", "rbo-analysis", "distinguish", "synth")
_BOOL_FLAGS = {"force", "resume", "verbose", "include-self"}


class WorkflowError(RuntimeError):
    """A failure reported to the user with exit status 1."""


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value file supplying option defaults")
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS/worker threads")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")


def _data(parser, required=True) -> None:
    parser.add_argument("--train", required=required, help="training interactions file")
    parser.add_argument("--test", required=required, help="test interactions file")


def _model(parser) -> None:
    parser.add_argument("--model", choices=MODELS, default="cagcn-star")
    parser.add_argument("--metric", choices=METRICS, default="jc")
    parser.add_argument("--hops", type=int, default=1)
    parser.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    parser.add_argument("--gamma", type=float, default=1.2)
    parser.add_argument("--layers", type=int, default=3)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--l2", type=float, default=1e-4)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--eval-every", type=int, default=5)
    parser.add_argument("--k", type=int, default=20)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cagcn", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = subs.add_parser("stats", help="dataset statistics")
    _common(p)
    _data(p)

    p = subs.add_parser("cir", help="compute and save the CIR matrix")
    _common(p)
    _data(p)
    p.add_argument("--metric", choices=METRICS, default="jc")
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("train", help="train a model into a run directory")
    _common(p)
    _data(p)
    _model(p)
    p.add_argument("--cir", help="precomputed CIR file to reuse")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--force", action="store_true", help="overwrite an existing run")
    p.add_argument("--resume", action="store_true", help="warm-start from the run's embeddings")

    p = subs.add_parser("evaluate", help="Recall/NDCG of saved representations")
    _common(p)
    _data(p)
    p.add_argument("--ckpt", required=True, help="pooled representations (EMB file)")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--buckets", default="0,300", help="ascending degree thresholds starting at 0")
    p.add_argument("--out", required=True)

    p = subs.add_parser("study", help="edge-budget retrain or pretrain study")
    _common(p)
    _data(p)
    _model(p)
    p.add_argument("--mode", choices=("retrain", "pretrain"), default="retrain")
    p.add_argument("--strategy", choices=("cir", "random"), default="cir")
    p.add_argument("--scope", choices=("local", "global"), default="local")
    p.add_argument("--budgets", default="0.1:1.0:0.1")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--ckpt", help="pretrained ego embeddings (pretrain mode)")
    p.add_argument("--out", required=True)
    p.set_defaults(metric="lhn", model="lightgcn")

    p = subs.add_parser("rbo-analysis", help="CIR ranking agreement across neighborhoods")
    _common(p)
    _data(p)
    p.add_argument("--metric", default="all", help="'all' or comma-separated metrics")
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--neighborhoods", choices=("full", "train"), default="full",
                   help="graph defining item-item affinities")
    p.add_argument("--include-self", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("distinguish", help="print the fixture-pair distinguishing report")
    _common(p)

    p = subs.add_parser("synth", help="write a synthetic benchmark-sized split")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--out", required=True, help="directory for train.txt and test.txt")
    return parser


def read_config(path) -> list[str]:
    """Translate a ``key=value`` file into command-line tokens."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    tokens = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key in _BOOL_FLAGS:
            truthy = value.lower() in ("1", "true", "yes", "on")
            if truthy:
                tokens.append(f"--{key}")
            elif key == "include-self":
                tokens.append("--no-include-self")
        else:
            tokens += [f"--{key}", value]
    return tokens


def _with_config(argv: list[str]) -> list[str]:
    if not argv or argv[0] not in SUBCOMMANDS or "--config" not in argv[1:]:
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    return [argv[0]] + read_config(known.config) + argv[1:]


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        model=args.model, epochs=args.epochs, learning_rate=args.lr, l2_weight=args.l2,
        batch_size=args.batch, embedding_dim=args.dim, layers=args.layers, gamma=args.gamma,
        seed=args.seed, eval_every=args.eval_every, k=args.k,
        cir=CirConfig(metric=args.metric, hops=args.hops, include_self=args.include_self),
    )


def _config_dict(config: TrainConfig) -> dict:
    return {
        "model": config.model, "epochs": config.epochs, "learning_rate": config.learning_rate,
        "l2_weight": config.l2_weight, "batch_size": config.batch_size,
        "embedding_dim": config.embedding_dim, "layers": config.layers, "gamma": config.gamma,
        "seed": config.seed, "eval_every": config.eval_every, "k": config.k,
        "metric": config.cir.metric, "hops": config.cir.hops, "include_self": config.cir.include_self,
    }


def persist_run(run_dir, config: dict, seed: int, preprocess_seconds: float,
                training_seconds: float, artifacts) -> Path:
    """Write ``manifest.json`` describing a finished run."""
    manifest = {
        "config": config,
        "seed": seed,
        "preprocess_seconds": preprocess_seconds,
        "training_seconds": training_seconds,
        "artifacts": sorted(artifacts),
    }
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.8f}"


def cmd_stats(args) -> int:
    stats = graph_stats(load_dataset(args.train, args.test))
    print(f"{'Users':>10} {'Items':>10} {'Interactions':>14} {'Density':>10}")
    print(f"{stats['users']:>10} {stats['items']:>10} {stats['interactions']:>14} {stats['density']:>10.5f}")
    return 0


def cmd_cir(args) -> int:
    dataset = load_dataset(args.train, args.test)
    start = time.perf_counter()
    cir = compute_cir(dataset.train, CirConfig(metric=args.metric, hops=args.hops,
                                               include_self=args.include_self))
    elapsed = time.perf_counter() - start
    save_cir(args.out, cir)
    print(f"wrote {args.out}: {cir.weights.nnz} entries in {elapsed:.2f}s")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    manifest = out / "manifest.json"
    if args.resume and not manifest.exists():
        raise WorkflowError(f"{out}: no manifest.json to resume from")
    if manifest.exists() and not args.force:
        raise WorkflowError(f"{out} already holds a run; pass --force to overwrite it")
    config = _train_config(args)
    dataset = load_dataset(args.train, args.test)
    initial = None
    if args.resume:
        initial = load_embeddings(out / "ego.bin")
    cir = load_cir(args.cir) if args.cir else None
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WorkflowError(f"cannot create run directory {out}: {exc}") from exc
    result = train(dataset, config, cir=cir, initial_embeddings=initial)
    artifacts = ["loss.csv", "metrics.csv", "ego.bin", "emb.bin", "best_ego.bin", "best_emb.bin"]
    _write_csv(out / "loss.csv", ["epoch", "loss"],
               [[e, repr(float(v))] for e, v in enumerate(result.losses, start=1)])
    _write_csv(out / "metrics.csv", ["epoch", f"recall@{config.k}", f"ndcg@{config.k}", "wall_seconds"],
               [[m["epoch"], _fmt(m["recall"]), _fmt(m["ndcg"]), f"{m['wall_seconds']:.3f}"]
                for m in result.metrics])
    save_embeddings(out / "ego.bin", result.embeddings)
    save_embeddings(out / "emb.bin", result.representations)
    save_embeddings(out / "best_ego.bin", result.best_embeddings)
    save_embeddings(out / "best_emb.bin", result.best_representations)
    if result.cir is not None and cir is None:
        save_cir(out / "phi.cir", result.cir)
        artifacts.append("phi.cir")
    settings = _config_dict(config)
    settings["resumed"] = bool(args.resume)
    persist_run(out, settings, config.seed, result.preprocess_seconds, result.training_seconds,
                artifacts)
    last = result.metrics[-1] if result.metrics else None
    if last:
        print(f"epoch {last['epoch']}: recall@{config.k} {last['recall']:.4f} "
              f"ndcg@{config.k} {last['ndcg']:.4f}")
    print(f"run written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.train, args.test)
    reps = load_embeddings(args.ckpt)
    if reps.shape[0] != dataset.train.num_nodes:
        raise WorkflowError(f"{args.ckpt} has {reps.shape[0]} rows; the dataset has "
                            f"{dataset.train.num_nodes} nodes")
    report = evaluate(reps, dataset, k=args.k)
    edges = [int(x) for x in args.buckets.split(",")]
    buckets = degree_grouped_report(report, dataset.train, edges)
    k = args.k
    rows = [["all", report.users.size, _fmt(report.recall_mean), _fmt(float(report.recall.std())),
             _fmt(report.ndcg_mean), _fmt(float(report.ndcg.std()))]]
    for label, b in buckets.items():
        rows.append([label, b["users"], _fmt(b["recall_mean"]), _fmt(b["recall_std"]),
                     _fmt(b["ndcg_mean"]), _fmt(b["ndcg_std"])])
    _write_csv(args.out, ["bucket", "users", f"recall@{k}_mean", f"recall@{k}_std",
                          f"ndcg@{k}_mean", f"ndcg@{k}_std"], rows)
    print(f"recall@{k} {report.recall_mean:.4f} ndcg@{k} {report.ndcg_mean:.4f} "
          f"over {report.users.size} users")
    return 0


def cmd_study(args) -> int:
    dataset = load_dataset(args.train, args.test)
    budgets = parse_budgets(args.budgets)
    base = _train_config(args)
    pretrained = None
    if args.mode == "pretrain":
        if not args.ckpt:
            raise WorkflowError("pretrain mode needs --ckpt with pretrained ego embeddings")
        pretrained = load_embeddings(args.ckpt)
    cir = None
    if args.strategy == "cir":
        cir = compute_cir(dataset.train, CirConfig(metric=args.metric))
    rows, per_budget = [], {}
    for offset in range(args.seeds):
        seed = args.seed + offset
        plan = EdgeBudgetPlan(strategy=args.strategy, metric=args.metric, scope=args.scope,
                              budgets=budgets, seed=seed)
        config = replace(base, seed=seed)
        if args.mode == "retrain":
            curve = run_retrain_study(dataset, config, plan, cir=cir)
        else:
            curve = run_pretrain_study(dataset, config, plan, pretrained, cir=cir)
        for point in curve:
            rows.append([plan.label, seed, point.budget, point.edges, point.users,
                         "" if np.isnan(point.final_loss) else _fmt(point.final_loss),
                         _fmt(point.recall), _fmt(point.ndcg)])
            per_budget.setdefault(point.budget, []).append(point)
    label = rows[0][0] if rows else args.strategy
    for budget, points in per_budget.items():
        rows.append([label, "mean", budget, points[0].edges, points[0].users, "",
                     _fmt(float(np.mean([p.recall for p in points]))),
                     _fmt(float(np.mean([p.ndcg for p in points])))])
    k = args.k
    _write_csv(args.out, ["strategy", "seed", "budget", "edges", "users", "final_loss",
                          f"recall@{k}", f"ndcg@{k}"], rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_rbo(args) -> int:
    dataset = load_dataset(args.train, args.test)
    if dataset.num_test_interactions() == 0:
        raise WorkflowError("the test split is empty")
    metrics = METRICS if args.metric == "all" else tuple(args.metric.split(","))
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise WorkflowError(f"unknown metrics: {', '.join(sorted(unknown))}")
    result = cir_ranking_agreement(dataset, CirConfig(include_self=args.include_self), p=args.p,
                                   metrics=metrics, neighborhoods=args.neighborhoods)
    rows = [[m, r["users"], _fmt(r["train_test_mean"]), _fmt(r["train_test_std"]),
             _fmt(r["train_full_mean"]), _fmt(r["train_full_std"])] for m, r in result.items()]
    _write_csv(args.out, ["metric", "users", "train_test_mean", "train_test_std",
                          "train_full_mean", "train_full_std"], rows)
    for row in rows:
        print(" ".join(str(x) for x in row))
    return 0


def cmd_distinguish(args) -> int:
    print(json.dumps(distinguishing_test(), sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    dataset = desk_dataset(seed=args.seed, noise=args.noise)
    train_path, test_path = save_dataset(args.out, dataset)
    print(f"wrote {train_path} and {test_path}")
    return 0


_HANDLERS = {
    "stats": cmd_stats, "cir": cmd_cir, "train": cmd_train, "evaluate": cmd_evaluate,
    "study": cmd_study, "rbo-analysis": cmd_rbo, "distinguish": cmd_distinguish, "synth": cmd_synth,
}


def dispatch(argv=None) -> int:
    """Run one subcommand; 0 on success, 1 on workflow errors, 2 on usage errors."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _with_config(argv)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return _HANDLERS[args.command](args)
    except (WorkflowError, FileNotFoundError, DatasetFormatError, TrainingDivergedError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
