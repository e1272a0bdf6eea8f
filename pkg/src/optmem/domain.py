"""Core value types shared across the framework: problems, trajectories,
experience nodes, clusters, the cluster co-occurrence graph, and the
similarity / classification primitives everything else builds on.

All types here are plain values. Construction-time mutation is confined to
the memory builder; everything a solver touches is treated as read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence


class DimensionMismatchError(ValueError):
    """Raised when two embeddings of different dimensionality meet."""


class IncompleteTrajectoryError(ValueError):
    """Raised when an all-failure trajectory stops short of the round budget."""


# ---------------------------------------------------------------------------
# Embeddings and similarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Embedding:
    """A fixed-length real vector, unit-normalized at construction time."""

    vector: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.vector)

    @staticmethod
    def unit(values: Sequence[float]) -> "Embedding":
        """Build an embedding from raw values, scaled to unit L2 norm."""
        norm = math.sqrt(sum(v * v for v in values))
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError("cannot unit-normalize a zero or non-finite vector")
        return Embedding(tuple(v / norm for v in values))


def similarity(a: Embedding, b: Embedding) -> float:
    """Cosine similarity between two embeddings, clamped to [-1, 1].

    Symmetric; equals 1.0 for an embedding against itself.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"embedding dims differ: {a.dim} vs {b.dim}")
    dot = sum(x * y for x, y in zip(a.vector, b.vector))
    norm_sq_a = sum(x * x for x in a.vector)
    norm_sq_b = sum(y * y for y in b.vector)
    if norm_sq_a == 0.0 or norm_sq_b == 0.0:
        raise ValueError("similarity undefined for zero vectors")
    cos = dot / math.sqrt(norm_sq_a * norm_sq_b)
    return max(-1.0, min(1.0, cos))


# ---------------------------------------------------------------------------
# Problems and ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    """Reference answer for a labeled problem.

    Both the objective value and every named requirement take part in
    correctness judging; requirements may be empty.
    """

    objective: float
    requirements: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.objective):
            raise ValueError("ground-truth objective must be finite")


@dataclass(frozen=True)
class Problem:
    """A natural-language optimization problem statement."""

    id: str
    text: str
    ground_truth: Optional[GroundTruth] = None
    source: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not self.text.strip():
            raise ValueError("problem text must be non-empty")


# ---------------------------------------------------------------------------
# Execution results
# ---------------------------------------------------------------------------

class ExecutionStatus(Enum):
    SUCCESS = "success"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    NON_NUMERIC_OUTPUT = "non_numeric_output"


@dataclass(frozen=True)
class ExtractedAnswer:
    """Numbers pulled out of a successful solver run."""

    objective: float
    requirements: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of running one generated solver script."""

    status: ExecutionStatus
    stdout: str = ""
    stderr: str = ""
    extracted: Optional[ExtractedAnswer] = None
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if (self.status is ExecutionStatus.SUCCESS) != (self.extracted is not None):
            raise ValueError("extracted answer present iff status is success")
        if self.wall_time < 0:
            raise ValueError("wall_time must be non-negative")

    @property
    def ok(self) -> bool:
        return self.status is ExecutionStatus.SUCCESS

    def error_payload(self) -> str:
        """The error text handed to the repair step."""
        if self.status is ExecutionStatus.TIMEOUT:
            return "execution timed out"
        return self.stderr or self.status.value


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttemptRecord:
    """One solve attempt made against a corpus problem during construction."""

    problem_id: str
    round_index: int
    modeling_text: str
    coding_text: str
    execution: ExecutionResult
    correct: bool

    def __post_init__(self) -> None:
        if self.round_index < 1:
            raise ValueError("round_index is 1-based")
        if self.correct and not self.execution.ok:
            raise ValueError("a correct attempt requires a successful execution")


class SampleType(Enum):
    A = "A"  # correct on every attempt
    B = "B"  # failed at least once, succeeded at least once
    C = "C"  # failed on every attempt within the round budget


def classify_trajectory(attempts: Sequence[AttemptRecord], max_rounds: int) -> SampleType:
    """Assign a sample type to a complete attempt trajectory.

    All-correct trajectories are type A. Trajectories mixing failures with at
    least one success are type B (the recovered stratum; the canonical case is
    an initial failure followed by a later success). All-incorrect
    trajectories are type C only once the round budget is exhausted; stopping
    early on persistent failure raises IncompleteTrajectoryError so the
    caller keeps attempting.
    """
    if not attempts:
        raise ValueError("trajectory must contain at least one attempt")
    if len(attempts) > max_rounds:
        raise ValueError(f"trajectory has {len(attempts)} attempts, budget is {max_rounds}")
    for i, attempt in enumerate(attempts):
        if attempt.round_index != i + 1:
            raise ValueError("attempt rounds must be contiguous from 1")

    outcomes = [a.correct for a in attempts]
    if all(outcomes):
        return SampleType.A
    if any(outcomes):
        return SampleType.B
    if len(attempts) < max_rounds:
        raise IncompleteTrajectoryError(
            f"all {len(attempts)} attempts failed but budget {max_rounds} not exhausted"
        )
    return SampleType.C


# ---------------------------------------------------------------------------
# Knowledge
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Knowledge:
    """Structured guidance: how to solve, what to verify, what to avoid.

    Used both for instance-level tuples extracted from a single trajectory
    and for cluster-level knowledge synthesized from batches of them.
    """

    approach: tuple[str, ...] = ()
    checklist: tuple[str, ...] = ()
    pitfall: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for tier in (self.approach, self.checklist, self.pitfall):
            if any(not item for item in tier):
                raise ValueError("knowledge items must be non-empty strings")

    @property
    def empty(self) -> bool:
        return not (self.approach or self.checklist or self.pitfall)

    @staticmethod
    def empty_knowledge() -> "Knowledge":
        return Knowledge((), (), ())


def check_tier_sources(sample_type: SampleType, phi: Knowledge) -> None:
    """Enforce the tier-source mapping: success-only strata carry no
    pitfalls, failure-only strata carry no approach/checklist."""
    if sample_type is SampleType.A and phi.pitfall:
        raise ValueError("type-A knowledge must not contain pitfalls")
    if sample_type is SampleType.C and (phi.approach or phi.checklist):
        raise ValueError("type-C knowledge must contain only pitfalls")


# ---------------------------------------------------------------------------
# Experience nodes, clusters, graph
# ---------------------------------------------------------------------------

class Space(Enum):
    MODELING = "modeling"
    CODING = "coding"


@dataclass(frozen=True)
class ExperienceNode:
    """One decomposed historical solution stored in memory."""

    id: str
    problem_id: str
    sample_type: SampleType
    modeling_text: str
    coding_text: str
    e_m: Embedding
    e_c: Embedding
    phi: Knowledge
    modeling_cluster: str
    coding_cluster: str

    def __post_init__(self) -> None:
        check_tier_sources(self.sample_type, self.phi)
        if not self.modeling_cluster or not self.coding_cluster:
            raise ValueError("node must belong to one cluster in each space")


@dataclass
class Cluster:
    """A group of experience nodes in one space.

    Carries a centroid (normalized mean of member embeddings), the
    generalized knowledge synthesized so far, and the batch of instance
    knowledge still waiting for the next synthesis pass.
    """

    id: str
    space: Space
    centroid: Embedding
    members: list[str] = field(default_factory=list)
    knowledge: Knowledge = field(default_factory=Knowledge.empty_knowledge)
    knowledge_version: int = 0
    pending_phis: list[Knowledge] = field(default_factory=list)


def centroid_of(embeddings: Sequence[Embedding]) -> Embedding:
    """Unit-normalized mean of a non-empty embedding collection."""
    if not embeddings:
        raise ValueError("centroid of empty member set is undefined")
    dim = embeddings[0].dim
    for e in embeddings:
        if e.dim != dim:
            raise DimensionMismatchError("member embeddings disagree on dim")
    n = len(embeddings)
    mean = [sum(e.vector[i] for e in embeddings) / n for i in range(dim)]
    return Embedding.unit(mean)


class BipartiteGraph:
    """Weighted edges between modeling and coding clusters.

    Each stored node contributes exactly one co-occurrence, so the weight
    total always equals the number of nodes inserted into memory.
    """

    def __init__(self, edges: Optional[Mapping[tuple[str, str], int]] = None) -> None:
        self.edges: dict[tuple[str, str], int] = dict(edges or {})
        for key, w in self.edges.items():
            if w < 1:
                raise ValueError(f"edge weight must be >= 1, got {w} for {key}")

    def increment(self, modeling_cluster: str, coding_cluster: str) -> int:
        key = (modeling_cluster, coding_cluster)
        self.edges[key] = self.edges.get(key, 0) + 1
        return self.edges[key]

    def weight(self, modeling_cluster: str, coding_cluster: str) -> int:
        return self.edges.get((modeling_cluster, coding_cluster), 0)

    def total_weight(self) -> int:
        return sum(self.edges.values())

    def neighbors(self, modeling_cluster: str) -> list[tuple[str, int]]:
        """Coding neighbors of a modeling cluster, heaviest first,
        ties broken by lower coding-cluster id."""
        found = [
            (cc, w) for (mc, cc), w in self.edges.items() if mc == modeling_cluster
        ]
        found.sort(key=lambda pair: (-pair[1], pair[0]))
        return found

    def sorted_edges(self) -> list[tuple[str, str, int]]:
        return [(mc, cc, w) for (mc, cc), w in sorted(self.edges.items())]

    def heaviest_edges(self, limit: int) -> list[tuple[str, str, int]]:
        ranked = sorted(self.edges.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(mc, cc, w) for (mc, cc), w in ranked[:limit]]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BipartiteGraph) and self.edges == other.edges

    def __len__(self) -> int:
        return len(self.edges)


# ---------------------------------------------------------------------------
# Solution paths and solve traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolutionPath:
    """A planned (modeling cluster, coding cluster) pair with its prior."""

    modeling_cluster: str
    coding_cluster: str
    weight: int
    origin: str = "expanded"  # "expanded" or "global_fallback"


class Verdict(Enum):
    SOLVED = "solved"
    FAILED_ALL_PATHS = "failed_all_paths"


@dataclass(frozen=True)
class ChatEvent:
    """One chat call made during construction or solving."""

    seq: int
    role: str
    purpose: str
    prompt: Optional[str] = None
    response: Optional[str] = None


@dataclass
class PathAttempt:
    """Everything that happened while one solution path was active.

    Baseline-mode attempts carry no path (memory is disabled)."""

    path: Optional[SolutionPath]
    model_raw: Optional[str] = None
    model_text: Optional[str] = None
    code_texts: list[str] = field(default_factory=list)
    executions: list[ExecutionResult] = field(default_factory=list)
    repair_rounds: int = 0
    solved: bool = False
    abandoned_because: Optional[str] = None


@dataclass
class SolveTrace:
    """Full audit record of one inference run."""

    problem_id: str
    retrieved_instances: list[str] = field(default_factory=list)
    retrieved_clusters: list[str] = field(default_factory=list)
    queue: list[SolutionPath] = field(default_factory=list)
    attempts: list[PathAttempt] = field(default_factory=list)
    chat_events: list[ChatEvent] = field(default_factory=list)
    final_verdict: Verdict = Verdict.FAILED_ALL_PATHS
    answer: Optional[ExtractedAnswer] = None
    total_wall_time: float = 0.0
    baseline_mode: bool = False

    def execution_count(self) -> int:
        return sum(len(a.executions) for a in self.attempts)

    def backtrack_count(self) -> int:
        """Paths abandoned before the one that solved (or all of them)."""
        return sum(1 for a in self.attempts if not a.solved)


def knowledge_to_lists(k: Knowledge) -> dict[str, list[str]]:
    return {
        "approach": list(k.approach),
        "checklist": list(k.checklist),
        "pitfall": list(k.pitfall),
    }


def knowledge_from_lists(data: Mapping[str, Iterable[str]]) -> Knowledge:
    return Knowledge(
        approach=tuple(data.get("approach", ())),
        checklist=tuple(data.get("checklist", ())),
        pitfall=tuple(data.get("pitfall", ())),
    )
