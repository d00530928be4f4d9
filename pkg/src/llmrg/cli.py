"""``llmrg`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import LLMRGConfig

logger = logging.getLogger("llmrg")

SUBCOMMANDS = ("ingest", "stats", "build-graphs", "train", "evaluate", "predict",
               "export-graph", "cache-stats", "synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=S, help="JSON config file")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--backend", choices=("mock", "http"), default=S)
    g.add_argument("--tau", type=int, default=S, help="verification threshold (0..100)")
    g.add_argument("--l-tru", dest="l_tru", type=int, default=S, help="truncation length")
    g.add_argument("--log-level", default=S, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    g.add_argument("--jobs", type=int, default=S, help="parallel model requests")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="llmrg", description="Reasoning-graph sequential recommendation.")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p)
        return p

    p = add("ingest", "parse a raw dataset into catalog/sequences/split files")
    p.add_argument("--format", required=True, choices=("movielens", "amazon"))
    p.add_argument("--ratings", help="ML-1M ratings.dat")
    p.add_argument("--movies", help="ML-1M movies.dat")
    p.add_argument("--reviews", help="Amazon reviews (JSON lines, optionally .gz)")
    p.add_argument("--meta", help="Amazon metadata (JSON lines, optionally .gz)")
    p.add_argument("--min-interactions", type=int, default=0,
                   help="iterated k-core filter on users and items (0 = off)")
    p.add_argument("--out", required=True)

    p = add("synth", "write a synthetic dataset plus the matching knowledge table")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--tastes", type=int, default=20)
    p.add_argument("--data-seed", type=int, default=0)

    p = add("stats", "print dataset statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--json", action="store_true")

    p = add("build-graphs", "construct reasoning and divergent graphs per user")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--knowledge", help="knowledge table for the mock backend")
    p.add_argument("--kbase", help="persistent knowledge-base file to reuse (JSON lines)")
    p.add_argument("--no-verify", action="store_true")
    p.add_argument("--no-divergent", action="store_true")
    p.add_argument("--users", type=int, default=None, help="only the first N users")

    p = add("train", "train a recommender on prebuilt graphs")
    p.add_argument("--graphs", required=True)
    p.add_argument("--split", required=True, help="dataset directory or split.json")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("full", "no-div", "base"), default="full")

    p = add("evaluate", "retrain per seed and report HR/NDCG")
    p.add_argument("--graphs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--variant", choices=("full", "no-div", "base"), default="full")
    p.add_argument("--seeds", default=None, help="comma-separated, default from config")
    p.add_argument("--model", help="score this checkpoint instead of retraining")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--csv", help="write per-seed CSV here")

    p = add("predict", "top-n items for one user")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--graphs", help="defaults to the directory used in training")
    p.add_argument("--split", help="defaults to the split used in training")

    p = add("export-graph", "export one user's graphs as DOT or JSON")
    p.add_argument("--graphs", default="graphs")
    p.add_argument("--user", required=True)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--view", choices=("train", "test"), default="test")
    p.add_argument("--out", help="output file (default stdout)")

    p = add("cache-stats", "knowledge-base telemetry of a graph build")
    p.add_argument("--graphs", required=True)
    p.add_argument("--window", type=int, default=300)
    p.add_argument("--csv", help="write the windowed access-frequency series here")
    return parser


def resolve_config(args) -> LLMRGConfig:
    """CLI flag > config file > built-in default."""
    cfg = LLMRGConfig.load(args.config) if getattr(args, "config", None) else LLMRGConfig()
    return cfg.override(seed=getattr(args, "seed", None), tau=getattr(args, "tau", None),
                        l_tru=getattr(args, "l_tru", None), jobs=getattr(args, "jobs", None),
                        **{"backend.kind": getattr(args, "backend", None)})


def _write(path, text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --- subcommands ----------------------------------------------------------

def cmd_ingest(args, cfg):
    from .ingest import (IngestReport, build_split, min_interaction_filter, parse_amazon,
                         parse_movielens, save_dataset)
    report = IngestReport()
    if args.format == "movielens":
        if not (args.ratings and args.movies):
            raise UsageError("movielens needs --ratings and --movies")
        catalog, seqs = parse_movielens(args.ratings, args.movies, report)
    else:
        if not (args.reviews and args.meta):
            raise UsageError("amazon needs --reviews and --meta")
        catalog, seqs = parse_amazon(args.reviews, args.meta, report)
    if args.min_interactions:
        seqs = min_interaction_filter(seqs, args.min_interactions, args.min_interactions)
        used = {e for s in seqs for e in s.events}
        from .domain import Catalog
        catalog = Catalog(it for it in catalog.items if it.id in used)
    save_dataset(args.out, catalog, seqs, build_split(seqs, cfg.l_tru))
    print(f"{len(seqs)} users, {len(catalog)} items; skipped {report.skipped_unknown_item} "
          f"unknown-item and {report.skipped_missing_field} incomplete records, "
          f"removed {report.duplicates_removed} duplicates")


def cmd_synth(args, cfg):
    from .ingest import build_split, save_dataset
    from .synthetic import make_synthetic
    catalog, seqs, knowledge = make_synthetic(args.users, args.items, args.tastes,
                                              seed=args.data_seed)
    save_dataset(args.out, catalog, seqs, build_split(seqs, cfg.l_tru))
    knowledge.save(Path(args.out) / "knowledge.json")
    print(f"wrote {len(seqs)} users and {len(catalog)} items to {args.out}")


def cmd_stats(args, cfg):
    from .ingest import DatasetStats, load_dataset, stats_dict
    _, seqs = load_dataset(args.dataset)
    stats = DatasetStats.compute(seqs)
    name = args.name or Path(args.dataset).name
    print(json.dumps(stats_dict(stats), indent=2) if args.json else stats.table(name))


def _knowledge_path(args, cfg):
    if args.knowledge:
        return args.knowledge
    if cfg.mock.knowledge_path:
        return cfg.mock.knowledge_path
    default = Path(args.dataset) / "knowledge.json"
    return str(default) if default.exists() else None


def cmd_build_graphs(args, cfg):
    from .ingest import LeaveOneOutSplit, build_split, load_dataset, load_split
    from .kbase import KnowledgeBase
    from .llm import KnowledgeTable
    from .pipeline import GraphBuilder, backend_from_config, save_graphs

    catalog, seqs = load_dataset(args.dataset)
    split_path = Path(args.dataset) / "split.json"
    split = load_split(split_path) if split_path.exists() else build_split(seqs, cfg.l_tru)
    if split.l_tru != cfg.l_tru:
        split = build_split(seqs, cfg.l_tru)
    if args.users is not None:
        split = LeaveOneOutSplit(split.l_tru, split.users[: args.users], split.dropped)
    cfg = cfg.override(verify=False if args.no_verify else None,
                       divergent=False if args.no_divergent else None)
    knowledge = None
    if cfg.backend.kind == "mock":
        kpath = _knowledge_path(args, cfg)
        knowledge = KnowledgeTable.load(kpath) if kpath else KnowledgeTable()
    llm = backend_from_config(cfg, knowledge)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kb_path = Path(args.kbase) if args.kbase else out / "kbase.jsonl"
    if not args.kbase and kb_path.exists():
        kb_path.unlink()
    kbase = KnowledgeBase(cfg.kb_capacity, path=kb_path)
    builder = GraphBuilder.from_config(cfg).fit(catalog=catalog, llm=llm, kbase=kbase)
    views = builder.build_split_views(split)
    save_graphs(out, views)
    telemetry = kbase.stats()
    (out / "telemetry.json").write_text(json.dumps(telemetry.to_dict()), encoding="utf-8")
    builder.audit_.write(out / "audit.jsonl")
    (out / "build.json").write_text(json.dumps({"config": cfg.to_dict(),
                                                "dataset": str(args.dataset)},
                                               indent=1, sort_keys=True), encoding="utf-8")
    print(f"built graphs for {len(views)} users; {llm.access_count} model calls, "
          f"{telemetry.hits}/{telemetry.lookups} cache hits, "
          f"{len(builder.audit_.records)} chains rejected")


def _load_split_for(path, cfg):
    from .ingest import build_split, load_dataset, load_split
    p = Path(path)
    if p.is_dir() and not (p / "split.json").exists():
        _, seqs = load_dataset(p)
        return build_split(seqs, cfg.l_tru)
    return load_split(p)


def _catalog_for(split_path):
    from .domain import Catalog
    p = Path(split_path)
    d = p if p.is_dir() else p.parent
    with open(d / "catalog.json", encoding="utf-8") as fh:
        return Catalog.from_dict(json.load(fh))


def _graphs_for(path, variant):
    from .pipeline import load_graphs
    return None if variant == "base" else load_graphs(path)


def cmd_train(args, cfg):
    from .recommend import LLMRGRecommender
    split = _load_split_for(args.split, cfg)
    catalog = _catalog_for(args.split)
    graphs = _graphs_for(args.graphs, args.variant)
    model = LLMRGRecommender.from_config(cfg, args.variant)
    model.fit(split, graphs=graphs, catalog=catalog)
    model.data_paths_ = {"graphs": str(args.graphs), "split": str(args.split)}
    model.save(args.out)
    print(f"trained {args.variant} on {model.n_train_} users; final loss "
          f"{model.loss_history_[-1]:.4f} -> {args.out}")


def cmd_evaluate(args, cfg):
    from .evaluate import MetricsReport, evaluate, metrics_from_ranks
    from .recommend import LLMRGRecommender
    split = _load_split_for(args.split, cfg)
    graphs = _graphs_for(args.graphs, args.variant)
    if args.model:
        model = LLMRGRecommender.load(args.model)
        ranks, missing = model.ranks(split, graphs)
        report = MetricsReport(model.variant, {int(model.seed): metrics_from_ranks(
            ranks[u] for u in sorted(ranks))}, missing)
    else:
        seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds else list(cfg.seeds))
        model = LLMRGRecommender.from_config(cfg, args.variant)
        report = evaluate(model, split, seeds, graphs=graphs, catalog=_catalog_for(args.split),
                          name=args.variant)
    if args.out:
        _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, report.to_csv())
    print(report.table())
    if report.excluded_users:
        print(f"({report.excluded_users} users without graphs excluded)")


def cmd_predict(args, cfg):
    from .recommend import LLMRGRecommender
    model = LLMRGRecommender.load(args.model)
    paths = model.data_paths_
    split_path = args.split or paths.get("split")
    graphs_path = args.graphs or paths.get("graphs")
    if not split_path:
        raise UsageError("--split is required for this checkpoint")
    users = [u for u in _load_split_for(split_path, cfg).users if u.user_id == args.user]
    if not users:
        raise KeyError(f"unknown user {args.user!r}")
    graphs = None
    if model.variant != "base":
        from .pipeline import load_user_graphs
        graphs = {args.user: load_user_graphs(graphs_path, args.user)}
    ranked = model.predict(users, graphs, n=args.n)
    for rank, item_id in enumerate(ranked[0] if ranked else [], 1):
        print(f"{rank}\t{item_id}\t{model.catalog_[item_id].title}")


def cmd_export_graph(args, cfg):
    from .domain import graphs_to_dot
    from .pipeline import load_user_graphs
    views = load_user_graphs(args.graphs, args.user)
    if args.view not in views:
        raise KeyError(f"user {args.user!r} has no {args.view} graphs")
    g = views[args.view]
    if args.format == "dot":
        text = graphs_to_dot(g, name=f"user_{args.user}")
    else:
        text = json.dumps(g.to_dict(), indent=1, sort_keys=True, ensure_ascii=False)
    _write(args.out, text)


def cmd_cache_stats(args, cfg):
    from .kbase import CacheTelemetry
    with open(Path(args.graphs) / "telemetry.json", encoding="utf-8") as fh:
        t = CacheTelemetry.from_dict(json.load(fh))
    series = t.windowed_access_frequency(args.window)
    first = series[min(args.window, len(series)) - 1][1] if series else 0.0
    last = series[-1][1] if series else 0.0
    print(f"lookups {t.lookups}  hits {t.hits}  hit-rate "
          f"{(t.hits / t.lookups if t.lookups else 0.0):.3f}  model calls {t.calls}")
    print(f"access frequency: first window {first:.3f}  final window {last:.3f}")
    if args.csv:
        _write(args.csv, t.to_csv(args.window))


HANDLERS = {"ingest": cmd_ingest, "synth": cmd_synth, "stats": cmd_stats,
            "build-graphs": cmd_build_graphs, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "export-graph": cmd_export_graph,
            "cache-stats": cmd_cache_stats}


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        sys.stderr.write(parser.format_usage())
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "llmrg: error: a subcommand is required")
        logging.basicConfig(level=getattr(args, "log_level", "WARNING"),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        HANDLERS[args.command](args, cfg)
        return 0
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        sys.stderr.write(f"llmrg: error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
