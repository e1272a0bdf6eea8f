"""Evaluation harnesses: end-to-end accuracy, memory-budget ablation, and
cross-backend memory transfer.

Accuracy is strict: a problem counts as solved only when the executed
script's extracted objective and every named requirement match the ground
truth within the configured tolerance. Rows aggregate in problem-id order
regardless of worker scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import Config
from .domain import Problem, SolveTrace, Verdict
from .inference import SolverEngine, null_clock
from .providers import ChatBackend, EmbeddingBackend
from .sandbox import SandboxExecutor, SandboxPolicy, StubExecutor, judge
from .store import MemoryStore, subsample


@dataclass
class ProblemResult:
    problem_id: str
    verdict: str
    judged_correct: bool
    objective: Optional[float]
    executions: int
    wall_time: float

    def as_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "verdict": self.verdict,
            "judged_correct": self.judged_correct,
            "objective": self.objective,
            "executions": self.executions,
            "wall_time": self.wall_time,
        }


@dataclass
class EvalSummary:
    total: int
    correct: int
    solved_executions: int
    accuracy_percent: float
    mean_wall_time_solved: float
    total_wall_time: float
    baseline_mode: bool
    results: list[ProblemResult] = field(default_factory=list)

    def as_record(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "solved_executions": self.solved_executions,
            "accuracy_percent": self.accuracy_percent,
            "mean_wall_time_solved": self.mean_wall_time_solved,
            "total_wall_time": self.total_wall_time,
            "baseline_mode": self.baseline_mode,
        }


def accuracy_percent(correct: int, total: int) -> float:
    """Solved-over-total as a percentage rounded to 2 decimals."""
    if total == 0:
        raise ValueError("cannot score an empty benchmark")
    return round(100.0 * correct / total, 2)


def make_executor(config: Config, force_stub: bool = False):
    """Stub executor unless a runner command is configured (and wanted)."""
    if force_stub or not config.harness_cmd:
        return StubExecutor()
    return SandboxExecutor(
        policy=SandboxPolicy(timeout_seconds=config.exec_timeout_seconds),
        harness_cmd=config.harness_cmd.split(),
    )


def evaluate(
    problems: Sequence[Problem],
    store: Optional[MemoryStore],
    config: Config,
    chat_backend: ChatBackend,
    embed_backend: EmbeddingBackend,
    baseline: bool = False,
    force_stub: bool = False,
    clock: Callable[[], float] = null_clock,
    trace_sink: Optional[Callable[[SolveTrace], None]] = None,
) -> EvalSummary:
    """Solve every problem, judge against ground truth, aggregate."""
    if not problems:
        raise ValueError("benchmark holds no problems")
    for problem in problems:
        if problem.ground_truth is None:
            raise ValueError(f"benchmark problem {problem.id} has no ground truth")

    def run_one(problem: Problem) -> tuple[ProblemResult, SolveTrace]:
        engine = SolverEngine(
            store=store,
            config=config,
            chat_backend=chat_backend,
            embed_backend=embed_backend,
            executor=make_executor(config, force_stub=force_stub),
            verbose_trace=False,
            clock=clock,
        )
        trace = engine.solve_baseline(problem) if baseline else engine.solve(problem)
        correct = (
            trace.final_verdict is Verdict.SOLVED
            and trace.answer is not None
            and judge(trace.answer, problem.ground_truth, config.numeric_rel_tolerance)
        )
        result = ProblemResult(
            problem_id=problem.id,
            verdict=trace.final_verdict.value,
            judged_correct=correct,
            objective=None if trace.answer is None else trace.answer.objective,
            executions=trace.execution_count(),
            wall_time=trace.total_wall_time,
        )
        return result, trace

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(run_one, problems))
    else:
        outcomes = [run_one(p) for p in problems]

    outcomes.sort(key=lambda pair: pair[0].problem_id)
    results = [result for result, _ in outcomes]
    if trace_sink is not None:
        for _, trace in outcomes:
            trace_sink(trace)
    correct = sum(1 for r in results if r.judged_correct)
    solved = [r for r in results if r.verdict == Verdict.SOLVED.value]
    mean_solved = (sum(r.wall_time for r in solved) / len(solved)) if solved else 0.0
    return EvalSummary(
        total=len(results),
        correct=correct,
        solved_executions=len(solved),
        accuracy_percent=accuracy_percent(correct, len(results)),
        mean_wall_time_solved=mean_solved,
        total_wall_time=sum(r.wall_time for r in results),
        baseline_mode=baseline,
        results=results,
    )


def write_eval_records(summary: EvalSummary, path: str | Path) -> None:
    lines = [json.dumps(r.as_record(), separators=(",", ":")) for r in summary.results]
    lines.append(json.dumps({"kind": "summary", **summary.as_record()},
                            separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# memory-budget ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    ratio: float
    nodes: int
    summary: EvalSummary

    def as_record(self) -> dict:
        return {"ratio": self.ratio, "nodes": self.nodes, **self.summary.as_record()}


def run_ablation(
    problems: Sequence[Problem],
    store: MemoryStore,
    config: Config,
    chat_backend: ChatBackend,
    embed_backend: EmbeddingBackend,
    ratios: Sequence[float],
    subsample_seed: int,
    force_stub: bool = False,
) -> list[AblationRow]:
    """One evaluation per memory budget; ratio 1.0 reuses the full store."""
    if not ratios:
        raise ValueError("ablation needs at least one ratio")
    rows = []
    for ratio in ratios:
        reduced = store if ratio == 1.0 else subsample(store, ratio, subsample_seed)
        summary = evaluate(problems, reduced, config, chat_backend, embed_backend,
                           force_stub=force_stub)
        rows.append(AblationRow(ratio=ratio, nodes=len(reduced.nodes), summary=summary))
    return rows


# ---------------------------------------------------------------------------
# cross-backend transfer
# ---------------------------------------------------------------------------

@dataclass
class TransferRow:
    memory_chat_model: str
    inference_chat_model: str
    summary: EvalSummary

    def as_record(self) -> dict:
        return {
            "memory_chat_model": self.memory_chat_model,
            "inference_chat_model": self.inference_chat_model,
            **self.summary.as_record(),
        }


def run_transfer(
    problems: Sequence[Problem],
    store: MemoryStore,
    config: Config,
    chat_backend: ChatBackend,
    embed_backend: EmbeddingBackend,
    force_stub: bool = False,
    warn: Optional[Callable[[str], None]] = None,
) -> TransferRow:
    """Evaluate the configured inference backend over a store that may have
    been constructed by a different one; both provenances are surfaced."""
    memory_model = str(store.provenance.get("chat_model", "")) or "(unknown)"
    if memory_model == "(unknown)" and warn is not None:
        warn("store provenance lacks the constructing model; proceeding anyway")
    summary = evaluate(problems, store, config, chat_backend, embed_backend,
                       force_stub=force_stub)
    return TransferRow(
        memory_chat_model=memory_model,
        inference_chat_model=chat_backend.model_name,
        summary=summary,
    )
