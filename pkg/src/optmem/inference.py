"""Memory-augmented solving: the generate-verify-repair-backtrack pipeline.

Every step while a path is active is conditioned on the generalized
knowledge of that path's clusters: the modeling cluster's approach guides
generation and its checklist guides verification; the coding cluster plays
the same role for the script, and its pitfalls steer repair. A path is
abandoned once its repair budget is spent, and the next queued path takes
over. Baseline mode skips memory entirely: one bare generate-generate-
execute pass.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Callable, Optional

from .config import Config
from .domain import (
    Knowledge,
    PathAttempt,
    Problem,
    SolveTrace,
    Verdict,
)
from .planner import plan_queue
from .prompts import LlmRole, format_items
from .providers import (
    ChatBackend,
    EmbeddingBackend,
    MalformedCompletionError,
    ProviderError,
    ProviderGateway,
)
from .sandbox import SandboxPolicy, scan_disallowed_imports
from .store import MemoryStore


class NoMemoryError(RuntimeError):
    """Solving needs a non-empty store; build one with build-memory."""


def null_clock() -> float:
    """Fixed clock for reproducible runs: every duration collapses to 0."""
    return 0.0


MODEL_TASK = "model formulation: variables, objective, constraints"
CODE_TASK = "solver code implementing the model"


class SolverEngine:
    """Solves problems against one loaded store snapshot.

    A fresh gateway is wired per solve so each trace owns its chat log;
    engines are therefore safe to share across worker threads as long as
    the backends are.
    """

    def __init__(
        self,
        store: Optional[MemoryStore],
        config: Config,
        chat_backend: ChatBackend,
        embed_backend: EmbeddingBackend,
        executor,
        verbose_trace: bool = False,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        config.validate()
        if store is not None and store.nodes and store.dim != embed_backend.dim:
            raise ValueError(
                f"store dim {store.dim} disagrees with embedding backend dim "
                f"{embed_backend.dim}")
        self.store = store
        self.config = config
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.executor = executor
        self.verbose_trace = verbose_trace
        self.clock = clock
        self.policy = SandboxPolicy(timeout_seconds=config.exec_timeout_seconds)

    def _gateway(self, trace: SolveTrace) -> ProviderGateway:
        return ProviderGateway(
            self.chat_backend,
            self.embed_backend,
            verbose_trace=self.verbose_trace,
            recorder=trace.chat_events.append,
        )

    # -- memory-augmented solve -------------------------------------------------

    def solve(self, problem: Problem) -> SolveTrace:
        if self.store is None or not self.store.nodes:
            raise NoMemoryError(
                "no memory loaded; construct a store with build-memory first")
        started = self.clock()
        trace = SolveTrace(problem_id=problem.id)
        gateway = self._gateway(trace)

        e_new = gateway.embed(problem.text)
        instance_ids, candidate_clusters, queue = plan_queue(
            problem.text, e_new, self.store,
            self.config.retrieval_top_k, self.config.max_paths, gateway,
        )
        trace.retrieved_instances = instance_ids
        trace.retrieved_clusters = candidate_clusters
        trace.queue = queue

        for path in queue:
            attempt = PathAttempt(path=path)
            trace.attempts.append(attempt)
            modeling_knowledge = self.store.modeling_clusters[path.modeling_cluster].knowledge
            coding_knowledge = self.store.coding_clusters[path.coding_cluster].knowledge
            if self._run_path(problem, attempt, modeling_knowledge, coding_knowledge, gateway):
                trace.final_verdict = Verdict.SOLVED
                trace.answer = attempt.executions[-1].extracted
                break
        else:
            trace.final_verdict = Verdict.FAILED_ALL_PATHS
        trace.total_wall_time = self.clock() - started
        return trace

    def _run_path(self, problem: Problem, attempt: PathAttempt,
                  modeling_knowledge: Knowledge, coding_knowledge: Knowledge,
                  gateway: ProviderGateway) -> bool:
        """One full path attempt; True when an execution succeeded."""
        model_raw = self._generate(gateway, MODEL_TASK, problem.text,
                                   modeling_knowledge.approach, "model_generation")
        if model_raw is None:
            attempt.abandoned_because = "model_generation_failed"
            return False
        attempt.model_raw = model_raw
        model_text = self._verify(gateway, model_raw, modeling_knowledge.checklist,
                                  "model_verification")
        attempt.model_text = model_text

        code_raw = self._generate(gateway, CODE_TASK, model_text,
                                  coding_knowledge.approach, "code_generation")
        if code_raw is None:
            attempt.abandoned_because = "code_generation_failed"
            return False
        code = self._verify_code(gateway, code_raw, coding_knowledge.checklist)
        attempt.code_texts.append(code)

        result = self.executor.run(code)
        attempt.executions.append(result)
        while not result.ok and attempt.repair_rounds < self.config.repair_limit:
            attempt.repair_rounds += 1
            fixed = self._repair(gateway, code, result.error_payload(), coding_knowledge)
            if fixed is None:
                continue  # the round is spent even when the fixer misfires
            code = fixed
            attempt.code_texts.append(code)
            result = self.executor.run(code)
            attempt.executions.append(result)
        if result.ok:
            attempt.solved = True
            return True
        attempt.abandoned_because = f"exhausted repairs ({result.status.value})"
        return False

    # -- baseline mode ------------------------------------------------------------

    def solve_baseline(self, problem: Problem) -> SolveTrace:
        """Memory-free single pass: generate model, generate code, execute."""
        started = self.clock()
        trace = SolveTrace(problem_id=problem.id, baseline_mode=True)
        gateway = self._gateway(trace)
        attempt = PathAttempt(path=None)
        trace.attempts.append(attempt)
        model_text = self._generate(gateway, MODEL_TASK, problem.text, (),
                                    "model_generation")
        if model_text is not None:
            attempt.model_raw = model_text
            attempt.model_text = model_text
            code = self._generate(gateway, CODE_TASK, model_text, (), "code_generation")
            if code is not None:
                attempt.code_texts.append(code)
                result = self.executor.run(code)
                attempt.executions.append(result)
                if result.ok:
                    attempt.solved = True
                    trace.final_verdict = Verdict.SOLVED
                    trace.answer = result.extracted
        if not attempt.solved:
            attempt.abandoned_because = attempt.abandoned_because or "baseline attempt failed"
            trace.final_verdict = Verdict.FAILED_ALL_PATHS
        trace.total_wall_time = self.clock() - started
        return trace

    # -- step helpers ----------------------------------------------------------------

    def _generate(self, gateway: ProviderGateway, task: str, source: str,
                  approach: tuple[str, ...], purpose: str) -> Optional[str]:
        try:
            text = gateway.chat_structured(
                LlmRole.GENERATOR,
                {"task": task, "attempt": "1", "input": source,
                 "guidance": format_items(approach)},
                purpose=purpose,
            )
        except (MalformedCompletionError, ProviderError):
            return None
        return text if text.strip() else None

    def _verify(self, gateway: ProviderGateway, draft: str,
                checklist: tuple[str, ...], purpose: str) -> str:
        """One verification round; an empty checklist passes vacuously and a
        misbehaving verifier never blocks the pipeline."""
        if not checklist:
            return draft
        try:
            verdict = gateway.chat_structured(
                LlmRole.VERIFIER,
                {"task": "verify the draft against the checklist; PASS or FAIL with a revision",
                 "content": draft, "reference": format_items(checklist)},
                purpose=purpose,
            )
        except (MalformedCompletionError, ProviderError):
            return draft
        if verdict.kind == "fail" and verdict.revision:
            return verdict.revision
        return draft

    def _verify_code(self, gateway: ProviderGateway, code_raw: str,
                     checklist: tuple[str, ...]) -> str:
        code = self._verify(gateway, code_raw, checklist, "code_verification")
        violations = scan_disallowed_imports(code, self.policy)
        if violations:
            # One revision pass naming the violation; execution still gates.
            reference = format_items(
                tuple(checklist) + (f"the script must not import: {', '.join(violations)}",))
            try:
                verdict = gateway.chat_structured(
                    LlmRole.VERIFIER,
                    {"task": "verify the draft against the checklist; PASS or FAIL with a revision",
                     "content": code, "reference": reference},
                    purpose="code_verification",
                )
            except (MalformedCompletionError, ProviderError):
                return code
            if verdict.kind == "fail" and verdict.revision:
                return verdict.revision
        return code

    def _repair(self, gateway: ProviderGateway, code: str, error: str,
                coding_knowledge: Knowledge) -> Optional[str]:
        try:
            fixed = gateway.chat_structured(
                LlmRole.FIXER,
                {"error": error,
                 "pitfalls": format_items(coding_knowledge.pitfall),
                 "checklist": format_items(coding_knowledge.checklist),
                 "code": code},
                purpose="repair",
            )
        except (MalformedCompletionError, ProviderError):
            return None
        return fixed if fixed.strip() else None


# ---------------------------------------------------------------------------
# Trace serialization (same line-delimited structured-text idiom as the store)
# ---------------------------------------------------------------------------

def trace_to_records(trace: SolveTrace) -> list[dict]:
    records: list[dict] = [{
        "kind": "meta",
        "problem_id": trace.problem_id,
        "baseline_mode": trace.baseline_mode,
        "final_verdict": trace.final_verdict.value,
        "answer": None if trace.answer is None else {
            "objective": trace.answer.objective,
            "requirements": dict(trace.answer.requirements),
        },
        "executions": trace.execution_count(),
        "total_wall_time": trace.total_wall_time,
    }]
    records.append({
        "kind": "retrieval",
        "instances": list(trace.retrieved_instances),
        "clusters": list(trace.retrieved_clusters),
    })
    records.append({
        "kind": "queue",
        "paths": [_path_record(p) for p in trace.queue],
    })
    for index, attempt in enumerate(trace.attempts):
        records.append({
            "kind": "path_attempt",
            "index": index,
            "path": _path_record(attempt.path) if attempt.path else None,
            "model_raw": attempt.model_raw,
            "model_text": attempt.model_text,
            "code_texts": list(attempt.code_texts),
            "executions": [{
                "status": r.status.value,
                "stdout": r.stdout,
                "stderr": r.stderr,
                "extracted": None if r.extracted is None else {
                    "objective": r.extracted.objective,
                    "requirements": dict(r.extracted.requirements),
                },
                "wall_time": r.wall_time,
            } for r in attempt.executions],
            "repair_rounds": attempt.repair_rounds,
            "solved": attempt.solved,
            "abandoned_because": attempt.abandoned_because,
        })
    for event in trace.chat_events:
        records.append({
            "kind": "chat",
            "seq": event.seq,
            "role": event.role,
            "purpose": event.purpose,
            "prompt": event.prompt,
            "response": event.response,
        })
    return records


def _path_record(path) -> dict:
    return {
        "modeling_cluster": path.modeling_cluster,
        "coding_cluster": path.coding_cluster,
        "weight": path.weight,
        "origin": path.origin,
    }


def save_trace(trace: SolveTrace, path: str | Path) -> None:
    lines = [json.dumps(r, ensure_ascii=False, separators=(",", ":"))
             for r in trace_to_records(trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
