"""Dual-cluster experience memory for LLM-driven optimization solving.

The package splits into construction (corpus -> stratified trajectories ->
clustered experience nodes -> synthesized knowledge + co-occurrence graph),
persistence, retrieval planning, the generate-verify-repair-backtrack
solver, sandboxed execution, and the bench CLI on top.
"""

from .config import Config, ProviderConfig
from .domain import (
    AttemptRecord,
    BipartiteGraph,
    Cluster,
    Embedding,
    ExecutionResult,
    ExecutionStatus,
    ExperienceNode,
    ExtractedAnswer,
    GroundTruth,
    Knowledge,
    PathAttempt,
    Problem,
    SampleType,
    SolutionPath,
    SolveTrace,
    Space,
    Verdict,
    classify_trajectory,
    similarity,
)
from .inference import NoMemoryError, SolverEngine
from .sandbox import SandboxPolicy, format_answer_block, judge, parse_answer_block
from .store import MemoryStore, load, save, subsample

__version__ = "0.1.0"

__all__ = [
    "AttemptRecord",
    "BipartiteGraph",
    "Cluster",
    "Config",
    "Embedding",
    "ExecutionResult",
    "ExecutionStatus",
    "ExperienceNode",
    "ExtractedAnswer",
    "GroundTruth",
    "Knowledge",
    "MemoryStore",
    "NoMemoryError",
    "PathAttempt",
    "Problem",
    "ProviderConfig",
    "SampleType",
    "SandboxPolicy",
    "SolutionPath",
    "SolveTrace",
    "SolverEngine",
    "Space",
    "Verdict",
    "classify_trajectory",
    "format_answer_block",
    "judge",
    "load",
    "parse_answer_block",
    "save",
    "similarity",
    "subsample",
    "__version__",
]
