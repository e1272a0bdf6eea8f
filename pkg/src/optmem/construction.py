"""Memory construction: from a labeled corpus to a dual-cluster store.

The pipeline per problem: collect baseline solve attempts, classify the
trajectory, pick the representative solution texts, decompose them, extract
instance knowledge, then ingest the node -- which assigns one cluster per
space (embedding top-k shortlist + verifier confirmation), grows the
co-occurrence graph, and triggers batched knowledge synthesis.

Construction is single-writer and deterministic: nodes are ingested in
corpus order, cluster ids follow creation order, and every step lands in an
append-only log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .config import Config
from .domain import (
    AttemptRecord,
    BipartiteGraph,
    Cluster,
    Embedding,
    ExecutionResult,
    ExecutionStatus,
    ExperienceNode,
    Knowledge,
    Problem,
    SampleType,
    Space,
    centroid_of,
    check_tier_sources,
    classify_trajectory,
    similarity,
)
from .prompts import LlmRole, format_items
from .providers import (
    MalformedCompletionError,
    ProviderError,
    ProviderGateway,
    extract_fenced_blocks,
)
from .sandbox import judge
from .store import MemoryStore

SUMMARY_CHAR_BUDGET = 360
SUMMARY_APPROACH_HEAD = 2
SUMMARY_MEMBER_SNIPPETS = 2


class ConstructionError(RuntimeError):
    pass


class DecomposeError(ValueError):
    """Solution could not be split into modeling and coding components."""


# ---------------------------------------------------------------------------
# Solution decomposition
# ---------------------------------------------------------------------------

def compose_solution(modeling_text: str, coding_text: str) -> str:
    """Canonical two-fence solution document (inverse of decompose)."""
    return f"```model\n{modeling_text}\n```\n```python\n{coding_text}\n```\n"


def split_solution_fences(solution: str) -> tuple[Optional[str], Optional[str]]:
    modeling = coding = None
    for lang, body in extract_fenced_blocks(solution):
        if lang == "model" and modeling is None:
            modeling = body
        elif lang in ("python", "code") and coding is None:
            coding = body
    return modeling, coding


def decompose(solution: str, gateway: Optional[ProviderGateway] = None) -> tuple[str, str]:
    """Split a combined solution into (modeling_text, coding_text).

    Labeled fences split directly; otherwise one extractor call tries to
    reconstruct the sections. Raises DecomposeError when either component
    remains missing or empty.
    """
    modeling, coding = split_solution_fences(solution)
    if (modeling is None or coding is None) and gateway is not None:
        raw = gateway.chat(
            LlmRole.EXTRACTOR,
            {
                "task": "split this solution into its modeling section and its coding section",
                "content": solution,
                "context": "respond with a ```model fence and a ```python fence",
            },
            purpose="decompose_reconstruction",
        )
        re_model, re_code = split_solution_fences(raw)
        modeling = modeling if modeling is not None else re_model
        coding = coding if coding is not None else re_code
    if not modeling or not modeling.strip() or not coding or not coding.strip():
        raise DecomposeError("solution lacks a non-empty modeling or coding section")
    return modeling, coding


# ---------------------------------------------------------------------------
# Node drafts and the build report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeDraft:
    problem_id: str
    sample_type: SampleType
    modeling_text: str
    coding_text: str
    e_m: Embedding
    e_c: Embedding
    phi: Knowledge


@dataclass
class BuildReport:
    problems: int = 0
    nodes: int = 0
    dropped: int = 0
    type_counts: dict = field(default_factory=lambda: {"A": 0, "B": 0, "C": 0})
    modeling_clusters: int = 0
    coding_clusters: int = 0
    edges: int = 0
    total_edge_weight: int = 0
    synthesis_events: int = 0

    def as_record(self) -> dict:
        return {
            "problems": self.problems,
            "nodes": self.nodes,
            "dropped": self.dropped,
            "type_counts": dict(self.type_counts),
            "modeling_clusters": self.modeling_clusters,
            "coding_clusters": self.coding_clusters,
            "edges": self.edges,
            "total_edge_weight": self.total_edge_weight,
            "synthesis_events": self.synthesis_events,
        }


# ---------------------------------------------------------------------------
# Builder
# ---------------------------------------------------------------------------

class MemoryBuilder:
    """Single-writer constructor of a dual-cluster memory store."""

    def __init__(
        self,
        gateway: ProviderGateway,
        config: Config,
        log_sink: Optional[Callable[[dict], None]] = None,
    ) -> None:
        config.validate()
        self.gateway = gateway
        self.config = config
        self.log_sink = log_sink
        self.nodes: dict[str, ExperienceNode] = {}
        self.modeling_clusters: dict[str, Cluster] = {}
        self.coding_clusters: dict[str, Cluster] = {}
        self.graph = BipartiteGraph()
        self.report = BuildReport()
        self._member_embeddings: dict[str, list[Embedding]] = {}
        self._member_texts: dict[str, list[str]] = {}
        self._node_seq = 0
        self._cluster_seq = {Space.MODELING: 0, Space.CODING: 0}

    # -- logging --------------------------------------------------------------

    def _log(self, record: dict) -> None:
        if self.log_sink is not None:
            self.log_sink(record)

    # -- trajectory collection -------------------------------------------------

    def collect_trajectories(
        self, problems: Sequence[Problem], executor
    ) -> dict[str, list[AttemptRecord]]:
        """Baseline solve attempts per problem, stopping as soon as the
        trajectory is classifiable.

        A single first-round success is confirmed with one more attempt
        before the problem counts as always-correct; a failed confirmation
        sends the trajectory down the recovered route.
        """
        for problem in problems:
            if problem.ground_truth is None:
                raise ConstructionError(f"problem {problem.id} has no ground truth")
        trajectories: dict[str, list[AttemptRecord]] = {}
        max_rounds = self.config.max_classification_rounds
        for problem in problems:
            attempts: list[AttemptRecord] = []
            for round_index in range(1, max_rounds + 1):
                attempt = self._baseline_attempt(problem, round_index, executor)
                attempts.append(attempt)
                successes = sum(1 for a in attempts if a.correct)
                failures = len(attempts) - successes
                if attempt.correct:
                    if failures > 0:
                        break  # recovered
                    if successes >= 2 or max_rounds == 1:
                        break  # always-correct, confirmed
                    # lone clean success: run one confirmation attempt
            trajectories[problem.id] = attempts
        return trajectories

    def _baseline_attempt(self, problem: Problem, round_index: int, executor) -> AttemptRecord:
        """One memory-free generate->generate->execute attempt."""
        try:
            modeling_text = self.gateway.chat_structured(
                LlmRole.GENERATOR,
                {
                    "task": "model formulation: variables, objective, constraints",
                    "attempt": str(round_index),
                    "input": problem.text,
                    "guidance": "",
                },
                purpose="trajectory_model_generation",
            )
            coding_text = self.gateway.chat_structured(
                LlmRole.GENERATOR,
                {
                    "task": "solver code implementing the model",
                    "attempt": str(round_index),
                    "input": modeling_text,
                    "guidance": "",
                },
                purpose="trajectory_code_generation",
            )
            execution = executor.run(coding_text)
        except (MalformedCompletionError, ProviderError) as exc:
            execution = ExecutionResult(
                status=ExecutionStatus.RUNTIME_ERROR,
                stderr=f"attempt aborted: {exc}",
            )
            modeling_text, coding_text = "(generation failed)", "(generation failed)"
        correct = (
            execution.ok
            and problem.ground_truth is not None
            and judge(execution.extracted, problem.ground_truth,
                      self.config.numeric_rel_tolerance)
        )
        return AttemptRecord(
            problem_id=problem.id,
            round_index=round_index,
            modeling_text=modeling_text,
            coding_text=coding_text,
            execution=execution,
            correct=correct,
        )

    # -- knowledge extraction ---------------------------------------------------

    def extract_phi(
        self,
        problem: Problem,
        sample_type: SampleType,
        attempts: Sequence[AttemptRecord],
    ) -> Knowledge:
        """Instance knowledge per the tier-source mapping: approach and
        checklist from the final successful attempt, pitfalls from failures."""
        successes = [a for a in attempts if a.correct]
        failures = [a for a in attempts if not a.correct]
        if sample_type in (SampleType.B, SampleType.C) and not failures:
            raise ConstructionError("failure-derived tiers need at least one failed attempt")

        approach: tuple[str, ...] = ()
        checklist: tuple[str, ...] = ()
        pitfall: tuple[str, ...] = ()
        context = f"problem: {problem.text}"

        if sample_type in (SampleType.A, SampleType.B):
            final = successes[-1]
            content = f"MODEL:\n{final.modeling_text}\nCODE:\n{final.coding_text}"
            approach = self._extract_tier("approach", content, context)
            checklist = self._extract_tier("checklist", content, context)
        if sample_type in (SampleType.B, SampleType.C):
            parts = []
            for a in failures:
                parts.append(
                    f"FAILED ATTEMPT {a.round_index}:\nMODEL:\n{a.modeling_text}\n"
                    f"CODE:\n{a.coding_text}\nERROR:\n{a.execution.error_payload()}"
                )
            pitfall = self._extract_tier("pitfall", "\n".join(parts), context)

        phi = Knowledge(approach=approach, checklist=checklist, pitfall=pitfall)
        check_tier_sources(sample_type, phi)
        return phi

    def _extract_tier(self, tier: str, content: str, context: str) -> tuple[str, ...]:
        try:
            knowledge = self.gateway.chat_structured(
                LlmRole.EXTRACTOR,
                {"task": f"extract {tier} items from this material",
                 "content": content, "context": context},
                purpose="phi_extraction",
            )
        except (MalformedCompletionError, ProviderError) as exc:
            self._log({"event": "extraction_failed", "tier": tier, "reason": str(exc)})
            return ()
        return getattr(knowledge, tier)

    # -- cluster assignment ------------------------------------------------------

    def assign_cluster(self, node_id: str, embedding: Embedding, text: str,
                       space: Space) -> tuple[str, bool]:
        """Join the verifier-confirmed candidate cluster or create a new one.

        Returns (cluster id, created flag). A malformed verifier reply is
        treated as NO_MATCH: over-splitting is recoverable, wrong merging
        is not.
        """
        clusters = self._clusters(space)
        if clusters:
            candidates = self.top_k_clusters(embedding, space, self.config.retrieval_top_k)
            reference = "\n".join(
                f"[{c.id}] {self.cluster_summary(c)}" for c in candidates
            )
            verdict = None
            try:
                verdict = self.gateway.chat_structured(
                    LlmRole.VERIFIER,
                    {"task": f"cluster membership check in the {space.value} space: "
                             "pick the matching candidate or reject all",
                     "content": text, "reference": reference},
                    purpose=f"cluster_assignment_{space.value}",
                )
            except (MalformedCompletionError, ProviderError) as exc:
                self._log({"event": "assignment_verifier_failed", "space": space.value,
                           "reason": str(exc)})
            candidate_ids = {c.id for c in candidates}
            if verdict is not None and verdict.kind == "match" \
                    and verdict.cluster_id in candidate_ids:
                cluster = clusters[verdict.cluster_id]
                cluster.members.append(node_id)
                self._member_embeddings[cluster.id].append(embedding)
                self._member_texts[cluster.id].append(text)
                cluster.centroid = centroid_of(self._member_embeddings[cluster.id])
                return cluster.id, False
        return self._create_cluster(space, embedding, node_id, text), True

    def top_k_clusters(self, embedding: Embedding, space: Space, k: int) -> list[Cluster]:
        """Top-k clusters by centroid similarity, ties broken by lower id."""
        clusters = self._clusters(space)
        ranked = sorted(
            clusters.values(),
            key=lambda c: (-similarity(embedding, c.centroid), c.id),
        )
        return ranked[:k]

    def cluster_summary(self, cluster: Cluster) -> str:
        """Verifier-facing digest: knowledge head items plus member snippets."""
        parts = []
        if cluster.knowledge.approach:
            parts.append("approach: " + format_items(
                cluster.knowledge.approach[:SUMMARY_APPROACH_HEAD]).replace("\n", " "))
        snippets = [
            " ".join(text.split())[:120]
            for text in self._member_texts.get(cluster.id, [])[:SUMMARY_MEMBER_SNIPPETS]
        ]
        if snippets:
            parts.append("examples: " + " // ".join(snippets))
        return " | ".join(parts)[:SUMMARY_CHAR_BUDGET]

    def _clusters(self, space: Space) -> dict[str, Cluster]:
        return self.modeling_clusters if space is Space.MODELING else self.coding_clusters

    def _create_cluster(self, space: Space, embedding: Embedding, node_id: str,
                        text: str) -> str:
        self._cluster_seq[space] += 1
        prefix = "m" if space is Space.MODELING else "c"
        cluster_id = f"{prefix}{self._cluster_seq[space]:04d}"
        cluster = Cluster(
            id=cluster_id,
            space=space,
            centroid=embedding,
            members=[node_id],
        )
        self._clusters(space)[cluster_id] = cluster
        self._member_embeddings[cluster_id] = [embedding]
        self._member_texts[cluster_id] = [text]
        return cluster_id

    # -- ingestion ----------------------------------------------------------------

    def ingest(self, draft: NodeDraft) -> ExperienceNode:
        """Assign both spaces, store the node, bump the co-occurrence edge,
        and queue the instance knowledge for synthesis."""
        if draft.e_m.dim != self.gateway.dim or draft.e_c.dim != self.gateway.dim:
            raise ConstructionError("draft embedding dim disagrees with the store")
        self._node_seq += 1
        node_id = f"n{self._node_seq:06d}"
        mc_id, mc_new = self.assign_cluster(node_id, draft.e_m, draft.modeling_text,
                                            Space.MODELING)
        cc_id, cc_new = self.assign_cluster(node_id, draft.e_c, draft.coding_text,
                                            Space.CODING)
        node = ExperienceNode(
            id=node_id,
            problem_id=draft.problem_id,
            sample_type=draft.sample_type,
            modeling_text=draft.modeling_text,
            coding_text=draft.coding_text,
            e_m=draft.e_m,
            e_c=draft.e_c,
            phi=draft.phi,
            modeling_cluster=mc_id,
            coding_cluster=cc_id,
        )
        self.nodes[node_id] = node
        weight = self.graph.increment(mc_id, cc_id)
        self._log({
            "event": "node", "node": node_id, "problem": draft.problem_id,
            "sample_type": draft.sample_type.value,
            "modeling_cluster": mc_id, "modeling_cluster_new": mc_new,
            "coding_cluster": cc_id, "coding_cluster_new": cc_new,
            "edge_weight": weight,
        })
        for cluster in (self.modeling_clusters[mc_id], self.coding_clusters[cc_id]):
            cluster.pending_phis.append(draft.phi)
            self._maybe_synthesize(cluster)
        return node

    # -- knowledge synthesis ---------------------------------------------------------

    def _maybe_synthesize(self, cluster: Cluster) -> None:
        if len(cluster.pending_phis) >= self.config.knowledge_update_threshold:
            self.synthesize_knowledge(cluster)

    def synthesize_knowledge(self, cluster: Cluster) -> bool:
        """Merge the pending batch into the cluster knowledge.

        On a malformed synthesizer reply the knowledge and version stay
        untouched and the batch is retained for the next threshold crossing.
        """
        from .prompts import format_knowledge

        if len(cluster.pending_phis) < self.config.knowledge_update_threshold:
            raise ConstructionError("synthesis fired below the pending threshold")
        batch = "\n".join(format_knowledge(phi) for phi in cluster.pending_phis)
        try:
            merged = self.gateway.chat_structured(
                LlmRole.SYNTHESIZER,
                {"current": format_knowledge(cluster.knowledge), "batch": batch},
                purpose=f"knowledge_synthesis_{cluster.space.value}",
            )
        except (MalformedCompletionError, ProviderError) as exc:
            self._log({"event": "synthesis_failed", "cluster": cluster.id,
                       "reason": str(exc)})
            return False
        cluster.knowledge = merged
        cluster.knowledge_version += 1
        cluster.pending_phis.clear()
        self.report.synthesis_events += 1
        self._log({"event": "synthesis", "cluster": cluster.id,
                   "version": cluster.knowledge_version})
        return True

    # -- full build --------------------------------------------------------------------

    def build(self, problems: Sequence[Problem], executor) -> BuildReport:
        trajectories = self.collect_trajectories(problems, executor)
        for problem in problems:
            attempts = trajectories[problem.id]
            sample_type = classify_trajectory(attempts, self.config.max_classification_rounds)
            self.report.type_counts[sample_type.value] += 1
            representative = self._representative_attempt(sample_type, attempts)
            solution = compose_solution(representative.modeling_text,
                                        representative.coding_text)
            try:
                modeling_text, coding_text = decompose(solution, self.gateway)
            except DecomposeError as exc:
                self.report.dropped += 1
                self._log({"event": "dropped", "problem": problem.id, "reason": str(exc)})
                continue
            phi = self.extract_phi(problem, sample_type, attempts)
            draft = NodeDraft(
                problem_id=problem.id,
                sample_type=sample_type,
                modeling_text=modeling_text,
                coding_text=coding_text,
                e_m=self.gateway.embed(modeling_text),
                e_c=self.gateway.embed(coding_text),
                phi=phi,
            )
            self.ingest(draft)
        # Drain any batch a failed synthesis left at or above the threshold.
        for cluster in list(self.modeling_clusters.values()) + list(self.coding_clusters.values()):
            if len(cluster.pending_phis) >= self.config.knowledge_update_threshold:
                self.synthesize_knowledge(cluster)
        self.report.problems = len(problems)
        self.report.nodes = len(self.nodes)
        self.report.modeling_clusters = len(self.modeling_clusters)
        self.report.coding_clusters = len(self.coding_clusters)
        self.report.edges = len(self.graph)
        self.report.total_edge_weight = self.graph.total_weight()
        return self.report

    @staticmethod
    def _representative_attempt(sample_type: SampleType,
                                attempts: Sequence[AttemptRecord]) -> AttemptRecord:
        """The attempt whose texts the stored node carries: the final
        successful one for A/B, the final (failed) one for C."""
        if sample_type is SampleType.C:
            return attempts[-1]
        successes = [a for a in attempts if a.correct]
        return successes[-1]

    # -- snapshot ----------------------------------------------------------------------

    def to_store(self) -> MemoryStore:
        provenance = {
            "chat_model": self.gateway.chat_backend.model_name,
            "embed_model": self.gateway.embed_backend.model_name,
            "seed": self.config.seed,
        }
        store = MemoryStore(
            dim=self.gateway.dim,
            nodes=dict(self.nodes),
            modeling_clusters={cid: _clone_cluster(c) for cid, c in self.modeling_clusters.items()},
            coding_clusters={cid: _clone_cluster(c) for cid, c in self.coding_clusters.items()},
            graph=BipartiteGraph(dict(self.graph.edges)),
            config_snapshot=self.config.hyperparameter_snapshot(),
            provenance=provenance,
        )
        store.validate()
        return store


def _clone_cluster(cluster: Cluster) -> Cluster:
    return Cluster(
        id=cluster.id,
        space=cluster.space,
        centroid=cluster.centroid,
        members=list(cluster.members),
        knowledge=cluster.knowledge,
        knowledge_version=cluster.knowledge_version,
        pending_phis=list(cluster.pending_phis),
    )


def brute_force_cooccurrence(nodes: Sequence[ExperienceNode]) -> dict[tuple[str, str], int]:
    """Independent recount of edge weights from stored nodes (test oracle)."""
    counts: dict[tuple[str, str], int] = {}
    for node in nodes:
        key = (node.modeling_cluster, node.coding_cluster)
        counts[key] = counts.get(key, 0) + 1
    return counts


def isclose_vec(a: Sequence[float], b: Sequence[float], tol: float = 1e-12) -> bool:
    return len(a) == len(b) and all(math.isclose(x, y, rel_tol=0.0, abs_tol=tol)
                                    for x, y in zip(a, b))
