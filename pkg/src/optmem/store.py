"""Durable store layout and snapshot views.

One directory holds four files, all line-delimited JSON records with fixed
field order:

    manifest.json   one record: format version, dim, config snapshot,
                    entity counts, provenance (models + seed)
    nodes.jsonl     one record per experience node, insertion order
    clusters.jsonl  one record per cluster, modeling space first, id order
    edges.jsonl     one record per graph edge, sorted by cluster pair

Floats serialize via Python's shortest round-trip representation (at most 17
significant digits), so save -> load -> save is byte-identical. Writes go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .domain import (
    BipartiteGraph,
    Cluster,
    Embedding,
    ExperienceNode,
    SampleType,
    Space,
    centroid_of,
    check_tier_sources,
    knowledge_from_lists,
    knowledge_to_lists,
)

FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.json"
NODES_FILE = "nodes.jsonl"
CLUSTERS_FILE = "clusters.jsonl"
EDGES_FILE = "edges.jsonl"


class StoreError(RuntimeError):
    pass


class StoreVersionError(StoreError):
    """The directory was written by an incompatible format version."""


class CorruptStoreError(StoreError):
    """A store invariant does not hold; the message names it."""


@dataclass(frozen=True)
class StoreManifest:
    format_version: int
    embedding_dim: int
    config: Mapping[str, float]
    counts: Mapping[str, int]
    provenance: Mapping[str, object]


@dataclass
class MemoryStore:
    """An in-memory snapshot of the full dual-cluster memory.

    Loaded snapshots are treated as immutable; subsampling returns a new
    store rather than mutating this one.
    """

    dim: int
    nodes: dict[str, ExperienceNode] = field(default_factory=dict)
    modeling_clusters: dict[str, Cluster] = field(default_factory=dict)
    coding_clusters: dict[str, Cluster] = field(default_factory=dict)
    graph: BipartiteGraph = field(default_factory=BipartiteGraph)
    config_snapshot: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def node_list(self) -> list[ExperienceNode]:
        return list(self.nodes.values())

    def clusters_in(self, space: Space) -> dict[str, Cluster]:
        return self.modeling_clusters if space is Space.MODELING else self.coding_clusters

    def counts(self) -> dict[str, int]:
        return {
            "nodes": len(self.nodes),
            "modeling_clusters": len(self.modeling_clusters),
            "coding_clusters": len(self.coding_clusters),
            "edges": len(self.graph),
        }

    def manifest(self) -> StoreManifest:
        return StoreManifest(
            format_version=FORMAT_VERSION,
            embedding_dim=self.dim,
            config=dict(self.config_snapshot),
            counts=self.counts(),
            provenance=dict(self.provenance),
        )

    # -- invariants -----------------------------------------------------------

    def validate(self) -> None:
        """Raise CorruptStoreError naming the first violated invariant."""
        if not self.nodes and (self.modeling_clusters or self.coding_clusters or len(self.graph)):
            raise CorruptStoreError("empty node set with non-empty clusters or graph")
        for node in self.nodes.values():
            if node.e_m.dim != self.dim or node.e_c.dim != self.dim:
                raise CorruptStoreError(f"node {node.id}: embedding dim differs from store dim")
            if node.modeling_cluster not in self.modeling_clusters:
                raise CorruptStoreError(f"node {node.id}: unknown modeling cluster")
            if node.coding_cluster not in self.coding_clusters:
                raise CorruptStoreError(f"node {node.id}: unknown coding cluster")
            if node.id not in self.modeling_clusters[node.modeling_cluster].members:
                raise CorruptStoreError(f"node {node.id}: missing from its modeling cluster members")
            if node.id not in self.coding_clusters[node.coding_cluster].members:
                raise CorruptStoreError(f"node {node.id}: missing from its coding cluster members")
            try:
                check_tier_sources(node.sample_type, node.phi)
            except ValueError as exc:
                raise CorruptStoreError(f"node {node.id}: {exc}") from exc
        threshold = int(self.config_snapshot.get("knowledge_update_threshold", 0) or 0)
        for space, clusters in ((Space.MODELING, self.modeling_clusters),
                                (Space.CODING, self.coding_clusters)):
            for cluster in clusters.values():
                if cluster.space is not space:
                    raise CorruptStoreError(f"cluster {cluster.id}: wrong space tag")
                if not cluster.members:
                    raise CorruptStoreError(f"cluster {cluster.id}: empty member list")
                if cluster.centroid.dim != self.dim:
                    raise CorruptStoreError(f"cluster {cluster.id}: centroid dim differs")
                if cluster.knowledge_version < 0:
                    raise CorruptStoreError(f"cluster {cluster.id}: negative knowledge version")
                if threshold and len(cluster.pending_phis) >= threshold:
                    raise CorruptStoreError(
                        f"cluster {cluster.id}: pending batch not drained below threshold")
                member_embeddings = []
                for member_id in cluster.members:
                    node = self.nodes.get(member_id)
                    if node is None:
                        raise CorruptStoreError(f"cluster {cluster.id}: unknown member {member_id}")
                    back = node.modeling_cluster if space is Space.MODELING else node.coding_cluster
                    if back != cluster.id:
                        raise CorruptStoreError(
                            f"cluster {cluster.id}: member {member_id} points elsewhere")
                    member_embeddings.append(node.e_m if space is Space.MODELING else node.e_c)
                recomputed = centroid_of(member_embeddings)
                if not _vectors_close(recomputed.vector, cluster.centroid.vector):
                    raise CorruptStoreError(
                        f"cluster {cluster.id}: centroid is not the normalized member mean")
        recount: dict[tuple[str, str], int] = {}
        for node in self.nodes.values():
            key = (node.modeling_cluster, node.coding_cluster)
            recount[key] = recount.get(key, 0) + 1
        if recount != self.graph.edges:
            raise CorruptStoreError("graph edges disagree with the node co-occurrence recount")
        if self.graph.total_weight() != len(self.nodes):
            raise CorruptStoreError("total edge weight differs from the node count")

    # -- structural equality ----------------------------------------------------

    def semantically_equal(self, other: "MemoryStore") -> bool:
        return (
            self.dim == other.dim
            and self.nodes == other.nodes
            and _clusters_equal(self.modeling_clusters, other.modeling_clusters)
            and _clusters_equal(self.coding_clusters, other.coding_clusters)
            and self.graph == other.graph
            and self.config_snapshot == other.config_snapshot
            and self.provenance == other.provenance
        )


def _clusters_equal(a: Mapping[str, Cluster], b: Mapping[str, Cluster]) -> bool:
    if set(a) != set(b):
        return False
    for cid, ca in a.items():
        cb = b[cid]
        if (ca.space, ca.centroid, ca.members, ca.knowledge, ca.knowledge_version,
                ca.pending_phis) != (cb.space, cb.centroid, cb.members, cb.knowledge,
                                     cb.knowledge_version, cb.pending_phis):
            return False
    return True


def _vectors_close(a: Sequence[float], b: Sequence[float], tol: float = 1e-12) -> bool:
    return len(a) == len(b) and all(
        math.isclose(x, y, rel_tol=0.0, abs_tol=tol) for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def _node_record(node: ExperienceNode) -> dict:
    return {
        "id": node.id,
        "problem_id": node.problem_id,
        "sample_type": node.sample_type.value,
        "modeling_text": node.modeling_text,
        "coding_text": node.coding_text,
        "e_m": list(node.e_m.vector),
        "e_c": list(node.e_c.vector),
        "phi": knowledge_to_lists(node.phi),
        "modeling_cluster": node.modeling_cluster,
        "coding_cluster": node.coding_cluster,
    }


def _node_from_record(record: dict) -> ExperienceNode:
    return ExperienceNode(
        id=record["id"],
        problem_id=record["problem_id"],
        sample_type=SampleType(record["sample_type"]),
        modeling_text=record["modeling_text"],
        coding_text=record["coding_text"],
        e_m=Embedding(tuple(float(v) for v in record["e_m"])),
        e_c=Embedding(tuple(float(v) for v in record["e_c"])),
        phi=knowledge_from_lists(record["phi"]),
        modeling_cluster=record["modeling_cluster"],
        coding_cluster=record["coding_cluster"],
    )


def _cluster_record(cluster: Cluster) -> dict:
    return {
        "id": cluster.id,
        "space": cluster.space.value,
        "centroid": list(cluster.centroid.vector),
        "members": list(cluster.members),
        "knowledge": knowledge_to_lists(cluster.knowledge),
        "knowledge_version": cluster.knowledge_version,
        "pending": [knowledge_to_lists(phi) for phi in cluster.pending_phis],
    }


def _cluster_from_record(record: dict) -> Cluster:
    return Cluster(
        id=record["id"],
        space=Space(record["space"]),
        centroid=Embedding(tuple(float(v) for v in record["centroid"])),
        members=list(record["members"]),
        knowledge=knowledge_from_lists(record["knowledge"]),
        knowledge_version=int(record["knowledge_version"]),
        pending_phis=[knowledge_from_lists(p) for p in record["pending"]],
    )


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def save(store: MemoryStore, directory: str | Path) -> StoreManifest:
    """Persist a consistent store; re-saving an unchanged store is
    byte-identical."""
    store.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = store.manifest()
    manifest_record = {
        "format_version": manifest.format_version,
        "embedding_dim": manifest.embedding_dim,
        "config": dict(manifest.config),
        "counts": dict(manifest.counts),
        "provenance": dict(manifest.provenance),
    }
    _write_atomic(directory / MANIFEST_FILE, _dump(manifest_record) + "\n")
    _write_atomic(directory / NODES_FILE, "".join(
        _dump(_node_record(n)) + "\n" for n in store.nodes.values()))
    cluster_lines = [
        _dump(_cluster_record(c)) + "\n"
        for c in list(store.modeling_clusters.values()) + list(store.coding_clusters.values())
    ]
    _write_atomic(directory / CLUSTERS_FILE, "".join(cluster_lines))
    _write_atomic(directory / EDGES_FILE, "".join(
        _dump({"modeling_cluster": mc, "coding_cluster": cc, "weight": w}) + "\n"
        for mc, cc, w in store.graph.sorted_edges()))
    return manifest


def load(directory: str | Path) -> MemoryStore:
    """Reconstruct and fully validate a store snapshot from disk."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise StoreError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise StoreVersionError(
            f"store format version {version!r} needs migration to {FORMAT_VERSION}")
    for name in (NODES_FILE, CLUSTERS_FILE, EDGES_FILE):
        if not (directory / name).exists():
            raise StoreError(f"missing store file: {directory / name}")

    nodes: dict[str, ExperienceNode] = {}
    for record in _read_jsonl(directory / NODES_FILE):
        node = _node_from_record(record)
        if node.id in nodes:
            raise CorruptStoreError(f"duplicate node id {node.id}")
        nodes[node.id] = node

    modeling: dict[str, Cluster] = {}
    coding: dict[str, Cluster] = {}
    for record in _read_jsonl(directory / CLUSTERS_FILE):
        cluster = _cluster_from_record(record)
        target = modeling if cluster.space is Space.MODELING else coding
        if cluster.id in target:
            raise CorruptStoreError(f"duplicate cluster id {cluster.id}")
        target[cluster.id] = cluster

    edges: dict[tuple[str, str], int] = {}
    for record in _read_jsonl(directory / EDGES_FILE):
        key = (record["modeling_cluster"], record["coding_cluster"])
        if key in edges:
            raise CorruptStoreError(f"duplicate edge {key}")
        edges[key] = int(record["weight"])

    store = MemoryStore(
        dim=int(manifest["embedding_dim"]),
        nodes=nodes,
        modeling_clusters=modeling,
        coding_clusters=coding,
        graph=BipartiteGraph(edges),
        config_snapshot=dict(manifest.get("config", {})),
        provenance=dict(manifest.get("provenance", {})),
    )
    declared = manifest.get("counts", {})
    if dict(declared) != store.counts():
        raise CorruptStoreError("manifest counts disagree with file contents")
    store.validate()
    return store


def _read_jsonl(path: Path):
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptStoreError(f"{path.name}:{lineno}: invalid record: {exc}") from exc


# ---------------------------------------------------------------------------
# Subsampling (memory-budget harness)
# ---------------------------------------------------------------------------

def subsample(store: MemoryStore, ratio: float, seed: int) -> MemoryStore:
    """Retain ceil(ratio * nodes) uniformly chosen nodes and rebuild.

    Surviving clusters keep their id, knowledge, version, and pending batch;
    centroids are recomputed from the surviving members and edges recounted.
    Clusters left without members disappear.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must lie in (0, 1]")
    node_ids = list(store.nodes)
    keep_count = math.ceil(ratio * len(node_ids))
    rng = random.Random(seed)
    kept = set(rng.sample(node_ids, keep_count))
    nodes = {nid: node for nid, node in store.nodes.items() if nid in kept}

    def rebuild(clusters: Mapping[str, Cluster], space: Space) -> dict[str, Cluster]:
        out: dict[str, Cluster] = {}
        for cid, cluster in clusters.items():
            members = [m for m in cluster.members if m in kept]
            if not members:
                continue
            embeddings = [
                nodes[m].e_m if space is Space.MODELING else nodes[m].e_c
                for m in members
            ]
            out[cid] = Cluster(
                id=cid,
                space=space,
                centroid=centroid_of(embeddings),
                members=members,
                knowledge=cluster.knowledge,
                knowledge_version=cluster.knowledge_version,
                pending_phis=list(cluster.pending_phis),
            )
        return out

    edges: dict[tuple[str, str], int] = {}
    for node in nodes.values():
        key = (node.modeling_cluster, node.coding_cluster)
        edges[key] = edges.get(key, 0) + 1

    reduced = MemoryStore(
        dim=store.dim,
        nodes=nodes,
        modeling_clusters=rebuild(store.modeling_clusters, Space.MODELING),
        coding_clusters=rebuild(store.coding_clusters, Space.CODING),
        graph=BipartiteGraph(edges),
        config_snapshot=dict(store.config_snapshot),
        provenance=dict(store.provenance),
    )
    reduced.validate()
    return reduced
