"""Dual retrieval and path planning over an immutable store snapshot.

Instance-level and cluster-level retrieval are exhaustive similarity scans
(desk-scale stores make the oracle and the implementation the same thing),
merged into candidate modeling clusters, expanded through the co-occurrence
graph, and ranked by the selector into the prioritized path queue.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

from .domain import (
    BipartiteGraph,
    Cluster,
    Embedding,
    ExperienceNode,
    SolutionPath,
    similarity,
)
from .prompts import LlmRole, format_items
from .providers import MalformedCompletionError, ProviderError, ProviderGateway
from .store import MemoryStore


def instance_retrieve(e_new: Embedding, store: MemoryStore, k: int) -> list[ExperienceNode]:
    """The k nodes most similar to the query in modeling-embedding space;
    ties break deterministically on node id."""
    ranked = sorted(
        store.nodes.values(),
        key=lambda n: (-similarity(e_new, n.e_m), n.id),
    )
    return ranked[:k]


def cluster_retrieve(e_new: Embedding, store: MemoryStore, k: int) -> list[Cluster]:
    """The k modeling clusters whose centroids are most similar to the query."""
    ranked = sorted(
        store.modeling_clusters.values(),
        key=lambda c: (-similarity(e_new, c.centroid), c.id),
    )
    return ranked[:k]


def merge_candidates(instance_hits: Sequence[ExperienceNode],
                     cluster_hits: Sequence[Cluster]) -> list[str]:
    """Union of instance-derived and centroid-derived modeling clusters,
    instance-derived first, duplicates removed."""
    merged: list[str] = []
    for node in instance_hits:
        if node.modeling_cluster not in merged:
            merged.append(node.modeling_cluster)
    for cluster in cluster_hits:
        if cluster.id not in merged:
            merged.append(cluster.id)
    return merged


def expand_paths(candidates: Sequence[str], graph: BipartiteGraph, k: int,
                 log: Optional[Callable[[str], None]] = None) -> list[SolutionPath]:
    """Each candidate's top-k coding neighbors by edge weight become paths.

    Clusters without edges contribute nothing (and are logged); the pool is
    deduplicated preserving first occurrence.
    """
    pool: list[SolutionPath] = []
    seen: set[tuple[str, str]] = set()
    for mc in candidates:
        neighbors = graph.neighbors(mc)
        if not neighbors and log is not None:
            log(f"modeling cluster {mc} has no graph edges")
        for cc, weight in neighbors[:k]:
            key = (mc, cc)
            if key not in seen:
                seen.add(key)
                pool.append(SolutionPath(mc, cc, weight, origin="expanded"))
    return pool


def global_fallback_paths(graph: BipartiteGraph, limit: int) -> list[SolutionPath]:
    """Heaviest edges overall; keeps planning alive on tiny memories where
    no retrieved cluster has edges."""
    return [
        SolutionPath(mc, cc, w, origin="global_fallback")
        for mc, cc, w in graph.heaviest_edges(limit)
    ]


def deterministic_order(paths: Sequence[SolutionPath], e_new: Embedding,
                        store: MemoryStore) -> list[SolutionPath]:
    """Selector-free ordering: weight desc, then modeling-centroid
    similarity desc, then cluster ids."""
    def key(path: SolutionPath):
        cluster = store.modeling_clusters.get(path.modeling_cluster)
        sim = similarity(e_new, cluster.centroid) if cluster else -1.0
        return (-path.weight, -sim, path.modeling_cluster, path.coding_cluster)

    return sorted(paths, key=key)


def _path_summary(index: int, path: SolutionPath, store: MemoryStore) -> str:
    modeling = store.modeling_clusters.get(path.modeling_cluster)
    coding = store.coding_clusters.get(path.coding_cluster)
    m_head = "; ".join(modeling.knowledge.approach[:2]) if modeling else ""
    c_head = "; ".join(coding.knowledge.approach[:2]) if coding else ""
    return (
        f"{index}) modeling {path.modeling_cluster} [{m_head or 'no synthesized approach'}] "
        f"-> coding {path.coding_cluster} [{c_head or 'no synthesized approach'}] "
        f"(proven weight {path.weight})"
    )


def rank_paths(paths: Sequence[SolutionPath], problem_text: str, e_new: Embedding,
               store: MemoryStore, m: int, gateway: ProviderGateway) -> list[SolutionPath]:
    """Selector-ranked queue of at most m paths.

    A malformed or out-of-range ranking falls back to the deterministic
    order; a partial ranking is completed with the unranked remainder.
    """
    if not paths:
        raise ValueError("cannot rank an empty path pool")
    ordered = deterministic_order(paths, e_new, store)
    if len(ordered) == 1:
        return ordered[:m]
    listing = "\n".join(_path_summary(i, p, store) for i, p in enumerate(ordered))
    try:
        indices = gateway.chat_structured(
            LlmRole.SELECTOR,
            {"problem": problem_text, "paths": listing},
            purpose="path_ranking",
        )
    except (MalformedCompletionError, ProviderError):
        return ordered[:m]
    picked: list[SolutionPath] = []
    seen: set[int] = set()
    for index in indices:
        if 0 <= index < len(ordered) and index not in seen:
            seen.add(index)
            picked.append(ordered[index])
    if not picked:
        return ordered[:m]
    for i, path in enumerate(ordered):
        if i not in seen:
            picked.append(path)
    return picked[:m]


def plan_queue(problem_text: str, e_new: Embedding, store: MemoryStore, k: int, m: int,
               gateway: ProviderGateway,
               log: Optional[Callable[[str], None]] = None,
               ) -> tuple[list[str], list[str], list[SolutionPath]]:
    """Full planning pass: dual retrieval, merge, expansion, ranking.

    Returns (retrieved node ids, candidate modeling cluster ids, queue).
    """
    instance_hits = instance_retrieve(e_new, store, k)
    cluster_hits = cluster_retrieve(e_new, store, k)
    candidates = merge_candidates(instance_hits, cluster_hits)
    pool = expand_paths(candidates, store.graph, k, log=log)
    if not pool:
        pool = global_fallback_paths(store.graph, m)
        if log is not None and pool:
            log("no retrieved cluster has edges; using global top-weight paths")
    if not pool:
        raise ValueError("the graph has no edges to plan over")
    queue = rank_paths(pool, problem_text, e_new, store, m, gateway)
    return [n.id for n in instance_hits], candidates, queue
