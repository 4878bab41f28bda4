"""Command-line interface: ingest, build-repo, evolve, generate, stats."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import evolution, pipeline, search
from .backends import RemoteBackend, ScriptedBackend
from .embeddings import HashedTrigramEmbedder
from .errors import FigforgeError
from .pipeline import ExperienceStore
from .repository import MiddlewareRepository
from .rulebased import RuleBasedBackend

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad paths or flag combinations; maps to exit code 2."""


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["scripted", "rulebased", "remote"],
                        default="rulebased", help="chat backend kind")
    parser.add_argument("--endpoint", default=None, help="remote backend URL")
    parser.add_argument("--model", default=None, help="remote model name")
    parser.add_argument("--fixtures", default=None, help="scripted fixture directory")
    parser.add_argument("--seed", type=int, default=0, help="run seed")
    parser.add_argument("--a1", type=int, default=3, help="expansion width")
    parser.add_argument("--a2", type=int, default=3, help="simulation budget")
    parser.add_argument("--beta", type=float, default=1.0, help="exploration weight")
    parser.add_argument("--k", type=int, default=3, help="retrieval candidates per query")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--parallel", type=int, default=4, help="max concurrent backend calls")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def make_backend(args):
    if args.backend == "scripted":
        if not args.fixtures:
            raise UsageError("--backend scripted requires --fixtures")
        if not Path(args.fixtures).is_dir():
            raise UsageError(f"fixture directory {args.fixtures} does not exist")
        return ScriptedBackend(args.fixtures)
    if args.backend == "remote":
        if not args.endpoint or not args.model:
            raise UsageError("--backend remote requires --endpoint and --model")
        return RemoteBackend(endpoint=args.endpoint, model=args.model,
                             max_parallel=args.parallel)
    return RuleBasedBackend()


def make_search_params(args) -> search.SearchParams:
    return search.SearchParams(a1=args.a1, a2=args.a2, beta=args.beta)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {path} does not exist")
    return p


def cmd_ingest(args) -> int:
    if not Path(args.corpus).is_dir():
        raise UsageError(f"corpus directory {args.corpus} does not exist")
    backend = make_backend(args)
    store = pipeline.ingest(args.corpus, backend, threshold=args.threshold)
    Path(args.store).parent.mkdir(parents=True, exist_ok=True)
    store.save(args.store)
    accepted = len(store.accepted())
    print(f"{len(store.pairs)} pairs ({accepted} accepted) -> {args.store}")
    for line in store.report:
        print(f"  {line}")
    return 0


def cmd_build_repo(args) -> int:
    _require_file(args.store, "experience store")
    backend = make_backend(args)
    store = ExperienceStore.load(args.store)
    result = pipeline.build_repository(
        store, backend, HashedTrigramEmbedder(), merge_threshold=args.merge_threshold,
    )
    Path(args.repo).parent.mkdir(parents=True, exist_ok=True)
    result.repository.save(args.repo)
    print(f"{len(result.repository)} middlewares -> {args.repo}")
    for line in result.report:
        print(f"  {line}")
    return 0


def cmd_evolve(args) -> int:
    _require_file(args.repo, "repository file")
    _require_file(args.store, "experience store")
    backend = make_backend(args)
    provider = HashedTrigramEmbedder()
    repository = MiddlewareRepository.load(args.repo, provider=provider)
    store = ExperienceStore.load(args.store)
    config = evolution.EvolutionConfig(
        batch_size=args.batch_size,
        max_iterations=args.iterations,
        patience=args.patience,
        epsilon=args.epsilon,
        mes_delete_threshold=args.tau,
        min_usages_for_selection=args.min_usages,
        mutation_count=args.mutations,
        crossover_count=args.crossovers,
    )
    records = evolution.evolve(
        repository, store, config, backend, seed=args.seed,
        provider=provider, search_params=make_search_params(args), k=args.k,
    )
    repository.save(args.repo)
    report_text = evolution.format_report(records, repository)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "evolution_report.txt"
    report_path.write_text(report_text + "\n", encoding="utf-8")
    accepted = sum(1 for r in records if r.accepted)
    print(f"{len(records)} iterations ({accepted} accepted) -> {args.repo}")
    print(f"report -> {report_path}")
    return 0


def cmd_generate(args) -> int:
    _require_file(args.repo, "repository file")
    paper_path = _require_file(args.paper, "paper text")
    backend = make_backend(args)
    provider = HashedTrigramEmbedder()
    repository = MiddlewareRepository.load(args.repo, provider=provider)
    result = pipeline.generate(
        paper_path.read_text(encoding="utf-8"), repository, backend,
        params=make_search_params(args), seed=args.seed, out_dir=args.out,
        provider=provider, k=args.k,
    )
    note = "" if result.refined else " (refinement skipped)"
    print(f"figure with {len(result.canvas.elements)} elements "
          f"and {len(result.canvas.connectors)} connectors{note} -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    _require_file(args.repo, "repository file")
    repository = MiddlewareRepository.load(args.repo, provider=HashedTrigramEmbedder())
    rows = repository.mes_overview()
    print(f"{len(repository)} middlewares, themes: {', '.join(repository.themes()) or '-'}")
    print(f"{'theme':<16} {'concept':<20} {'middleware':<32} {'mes':>8} {'n':>4}")
    for theme, concept, mid, mes, count in rows:
        mes_text = f"{mes:.4f}" if mes is not None else "-"
        print(f"{theme:<16} {concept:<20} {mid:<32} {mes_text:>8} {count:>4}")
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figforge",
        description="Generate editable method illustrations from paper text.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="score a corpus of paper/figure pairs")
    p.add_argument("corpus", help="directory of <id>.txt + <id>.drawio pairs")
    p.add_argument("--threshold", type=float, default=0.5, help="acceptance quality bar")
    p.add_argument("--store", default="store.json", help="output store path")
    _common_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-repo", help="extract middlewares from an ingested store")
    p.add_argument("--store", default="store.json", help="experience store path")
    p.add_argument("--repo", default="repository.json", help="output repository path")
    p.add_argument("--merge-threshold", type=float, default=0.85,
                   help="concept-merge cosine threshold")
    _common_flags(p)
    p.set_defaults(func=cmd_build_repo)

    p = sub.add_parser("evolve", help="run evolution iterations over a repository")
    p.add_argument("--repo", default="repository.json", help="repository path (updated in place)")
    p.add_argument("--store", default="store.json", help="experience store path")
    p.add_argument("--iterations", type=int, default=5, help="max iterations")
    p.add_argument("--batch-size", type=int, default=4, help="papers per objective batch")
    p.add_argument("--patience", type=int, default=3, help="non-improving iterations before stop")
    p.add_argument("--epsilon", type=float, default=0.01, help="significant-improvement bar")
    p.add_argument("--tau", type=float, default=0.5, help="deletion MES threshold")
    p.add_argument("--min-usages", type=int, default=3, help="usage evidence before deletion")
    p.add_argument("--mutations", type=int, default=2, help="mutations per iteration")
    p.add_argument("--crossovers", type=int, default=1, help="crossovers per iteration")
    _common_flags(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("generate", help="generate a figure for one paper text")
    p.add_argument("--repo", default="repository.json", help="repository path")
    p.add_argument("--paper", required=True, help="paper text file")
    _common_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="print repository metrics")
    p.add_argument("--repo", default="repository.json", help="repository path")
    _common_flags(p)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FigforgeError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
