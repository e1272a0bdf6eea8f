"""Command-line surface.

Subcommands: gen-corpus, build-memory, solve, eval, ablate, transfer,
inspect. Configuration comes from an optional flat key-value file plus
repeatable ``--set key=value`` overrides; provider credentials come only
from OPTMEM_API_KEY / OPTMEM_EMBED_API_KEY.

Exit codes:
    0  success (solve: the problem was solved)
    1  unexpected crash
    2  usage, configuration, corpus, or guard error
    3  solve finished with failed_all_paths
    4  environment error (missing store, missing runner, provider failure)
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .config import Config, ConfigError, apply_setting, load_config
from .construction import MemoryBuilder
from .corpus import (
    CorpusError,
    load_problems,
    save_problems,
    scenario_build_corpus,
    scenario_eval_problems,
    single_cluster_corpus,
    synthetic_corpus,
)
from .domain import Verdict
from .inference import NoMemoryError, SolverEngine, null_clock, save_trace
from .providers import ProviderError, build_backends
from .sandbox import HarnessMissingError
from .store import MemoryStore, StoreError, load, save

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_USAGE = 2
EXIT_UNSOLVED = 3
EXIT_ENVIRONMENT = 4

CONSTRUCTION_LOG = "construction_log.jsonl"
BUILD_REPORT = "build_report.json"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = EXIT_USAGE) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def _resolve_config(args: argparse.Namespace) -> Config:
    config = Config()
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        apply_setting(config, key.strip(), value.strip())
    config.validate()
    return config


def _clock(config: Config):
    # The offline backend is deterministic; a fixed clock keeps whole runs
    # byte-reproducible. Live providers get real timings.
    return null_clock if config.provider == "mock" else time.monotonic


def _load_store(path: str, config: Optional[Config] = None) -> MemoryStore:
    directory = Path(path)
    if not directory.exists():
        raise CliError(f"store directory not found: {directory}", EXIT_ENVIRONMENT)
    try:
        store = load(directory)
    except StoreError as exc:
        raise CliError(f"cannot load store: {exc}", EXIT_ENVIRONMENT) from exc
    if config is not None:
        # The embedding dimension is a property of the store; backends must
        # produce it (the HTTP backend rejects responses of any other size).
        config.embedding_dim = store.dim
    return store


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args: argparse.Namespace) -> int:
    if args.kind == "plain":
        problems = synthetic_corpus(args.size, args.seed)
    elif args.kind == "scenario-build":
        problems = scenario_build_corpus(args.seed)
    elif args.kind == "scenario-eval":
        problems = scenario_eval_problems(args.seed)
    elif args.kind == "single-family":
        problems = single_cluster_corpus(args.size, args.seed)
    else:  # pragma: no cover - argparse already constrains choices
        raise CliError(f"unknown corpus kind {args.kind!r}")
    save_problems(problems, args.out)
    print(f"wrote {len(problems)} problems to {args.out}")
    return EXIT_OK


def cmd_build_memory(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    problems = load_problems(args.corpus)
    if not problems:
        raise CliError(f"corpus {args.corpus} is empty")
    if args.eval_corpus:
        eval_ids = {p.id for p in load_problems(args.eval_corpus)}
        overlap = sorted({p.id for p in problems} & eval_ids)
        if overlap:
            raise CliError(
                f"corpus shares {len(overlap)} problem ids with the declared eval set "
                f"(e.g. {overlap[:3]}); construction and evaluation must be disjoint")

    chat_backend, embed_backend = build_backends(config)
    from .providers import ProviderGateway

    log_records: list[dict] = []
    gateway = ProviderGateway(
        chat_backend, embed_backend,
        recorder=lambda event: log_records.append(
            {"event": "chat", "seq": event.seq, "role": event.role,
             "purpose": event.purpose}),
    )
    builder = MemoryBuilder(gateway, config, log_sink=log_records.append)
    executor = bench.make_executor(config, force_stub=args.stub_executor)
    started = time.monotonic()
    report = builder.build(problems, executor)
    elapsed = time.monotonic() - started

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save(builder.to_store(), out_dir)
    (out_dir / CONSTRUCTION_LOG).write_text(
        "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in log_records),
        encoding="utf-8")
    (out_dir / BUILD_REPORT).write_text(
        json.dumps(report.as_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    print(f"store written to {out_dir}")
    print(f"problems: {report.problems}  nodes: {report.nodes}  dropped: {report.dropped}")
    print("trajectory types: "
          f"A={report.type_counts['A']} B={report.type_counts['B']} C={report.type_counts['C']}")
    print(f"clusters: modeling={report.modeling_clusters} coding={report.coding_clusters}")
    print(f"graph edges: {report.edges} (total weight {report.total_edge_weight})")
    print(f"knowledge synthesis events: {report.synthesis_events}")
    print(f"construction wall time: {elapsed:.2f}s")
    return EXIT_OK


def _make_engine(config: Config, store: Optional[MemoryStore],
                 args: argparse.Namespace, verbose: bool = False) -> SolverEngine:
    chat_backend, embed_backend = build_backends(config)
    return SolverEngine(
        store=store,
        config=config,
        chat_backend=chat_backend,
        embed_backend=embed_backend,
        executor=bench.make_executor(config, force_stub=args.stub_executor),
        verbose_trace=verbose,
        clock=_clock(config),
    )


def cmd_solve(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    problems = load_problems(args.problem)
    if not problems:
        raise CliError(f"no problems in {args.problem}")
    if args.problem_id:
        matches = [p for p in problems if p.id == args.problem_id]
        if not matches:
            raise CliError(f"problem id {args.problem_id!r} not found in {args.problem}")
        problem = matches[0]
    else:
        problem = problems[0]

    if not args.baseline and not args.store:
        raise CliError("--store is required unless --baseline is set")
    store = None if args.baseline else _load_store(args.store, config)
    engine = _make_engine(config, store, args, verbose=args.verbose_trace)
    trace = engine.solve_baseline(problem) if args.baseline else engine.solve(problem)

    print(f"problem: {problem.id}")
    print(f"verdict: {trace.final_verdict.value}")
    if trace.answer is not None:
        print(f"objective: {trace.answer.objective!r}")
        for name, value in trace.answer.requirements.items():
            print(f"{name}: {value!r}")
    print(f"executions: {trace.execution_count()}  wall time: {trace.total_wall_time:.3f}s")
    if args.trace_out:
        save_trace(trace, args.trace_out)
        print(f"trace written to {args.trace_out}")
    return EXIT_OK if trace.final_verdict is Verdict.SOLVED else EXIT_UNSOLVED


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    problems = load_problems(args.benchmark)
    if not args.baseline and not args.store:
        raise CliError("--store is required unless --baseline is set")
    store = None if args.baseline else _load_store(args.store, config)
    chat_backend, embed_backend = build_backends(config)
    try:
        summary = bench.evaluate(
            problems, store, config, chat_backend, embed_backend,
            baseline=args.baseline, force_stub=args.stub_executor,
            clock=_clock(config))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    mode = "baseline" if args.baseline else "memory"
    print(f"mode: {mode}  problems: {summary.total}  correct: {summary.correct}")
    print(f"accuracy: {summary.accuracy_percent:.2f}%")
    print(f"mean wall time per solved attempt: {summary.mean_wall_time_solved:.3f}s  "
          f"total: {summary.total_wall_time:.3f}s")
    if args.out:
        bench.write_eval_records(summary, args.out)
        print(f"results written to {args.out}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    problems = load_problems(args.benchmark)
    store = _load_store(args.store, config)
    try:
        ratios = [float(part) for part in args.ratios.split(",") if part.strip()]
    except ValueError as exc:
        raise CliError(f"bad --ratios value {args.ratios!r}") from exc
    chat_backend, embed_backend = build_backends(config)
    try:
        rows = bench.run_ablation(problems, store, config, chat_backend, embed_backend,
                                  ratios, args.subsample_seed,
                                  force_stub=args.stub_executor)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print(f"{'ratio':>6}  {'nodes':>5}  {'accuracy':>8}")
    for row in rows:
        print(f"{row.ratio * 100:>5.0f}%  {row.nodes:>5}  {row.summary.accuracy_percent:>7.2f}%")
    if args.out:
        lines = [json.dumps(row.as_record(), separators=(",", ":")) for row in rows]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"rows written to {args.out}")
    return EXIT_OK


def cmd_transfer(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    problems = load_problems(args.benchmark)
    store = _load_store(args.store, config)
    chat_backend, embed_backend = build_backends(config)
    try:
        row = bench.run_transfer(problems, store, config, chat_backend, embed_backend,
                                 force_stub=args.stub_executor,
                                 warn=lambda msg: print(f"warning: {msg}", file=sys.stderr))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    print(f"memory constructed by: {row.memory_chat_model}")
    print(f"inference runs on:     {row.inference_chat_model}")
    print(f"accuracy: {row.summary.accuracy_percent:.2f}% "
          f"({row.summary.correct}/{row.summary.total})")
    if args.out:
        Path(args.out).write_text(json.dumps(row.as_record(), separators=(",", ":")) + "\n",
                                  encoding="utf-8")
        print(f"row written to {args.out}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    store = _load_store(args.store)
    counts = store.counts()
    print(f"nodes: {counts['nodes']}  edges: {counts['edges']} "
          f"(total weight {store.graph.total_weight()})")
    print(f"embedding dim: {store.dim}")
    print(f"provenance: {json.dumps(store.provenance, sort_keys=True)}")
    types = {"A": 0, "B": 0, "C": 0}
    for node in store.nodes.values():
        types[node.sample_type.value] += 1
    print(f"trajectory types: A={types['A']} B={types['B']} C={types['C']}")
    for label, clusters in (("modeling", store.modeling_clusters),
                            ("coding", store.coding_clusters)):
        print(f"{label} clusters: {len(clusters)}")
        for cluster in clusters.values():
            print(f"  {cluster.id}: {len(cluster.members)} members, "
                  f"knowledge v{cluster.knowledge_version}, "
                  f"{len(cluster.pending_phis)} pending")
    print("heaviest edges:")
    for mc, cc, w in store.graph.heaviest_edges(10):
        print(f"  {mc} -> {cc}: {w}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--stub-executor", action="store_true",
                        help="decode stub directives instead of running scripts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optmem",
        description="Dual-cluster experience memory for optimization solving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--kind", default="plain",
                   choices=("plain", "scenario-build", "scenario-eval", "single-family"))
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("build-memory", help="construct a store from a labeled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-corpus", help="declared evaluation set for the disjointness guard")
    _add_common(p)
    p.set_defaults(func=cmd_build_memory)

    p = sub.add_parser("solve", help="solve one problem against a store")
    p.add_argument("--problem", required=True, help="problem record file")
    p.add_argument("--problem-id", help="pick one id from the file (default: first)")
    p.add_argument("--store", help="store directory (unused with --baseline)")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--trace-out", help="write the solve trace here")
    p.add_argument("--verbose-trace", action="store_true",
                   help="embed every prompt and response in the trace")
    _add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="end-to-end accuracy over a benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--store")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--out", help="machine-readable results file")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="accuracy under reduced memory budgets")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--ratios", default="0.1,0.4,0.7,1.0")
    p.add_argument("--subsample-seed", type=int, default=13)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("transfer", help="run inference over another backend's memory")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("inspect", help="dump store statistics")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoMemoryError, StoreError, HarnessMissingError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
