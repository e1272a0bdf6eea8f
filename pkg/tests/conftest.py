"""Shared fixtures: mock-wired builders, prebuilt scenario stores, and a
generator of random-but-valid stores for property tests."""

from __future__ import annotations

import math
import random

import pytest

from optmem.config import Config
from optmem.construction import MemoryBuilder
from optmem.corpus import scenario_build_corpus, single_cluster_corpus
from optmem.domain import (
    BipartiteGraph,
    Cluster,
    Embedding,
    ExperienceNode,
    Knowledge,
    SampleType,
    Space,
    centroid_of,
)
from optmem.providers import MockChatBackend, MockEmbeddingBackend, ProviderGateway
from optmem.sandbox import StubExecutor
from optmem.store import MemoryStore


def make_config(**overrides) -> Config:
    config = Config(embedding_dim=16, seed=7)
    for key, value in overrides.items():
        setattr(config, key, value)
    config.validate()
    return config


def make_gateway(config: Config, recorder=None, verbose=False,
                 chat_backend=None) -> ProviderGateway:
    return ProviderGateway(
        chat_backend or MockChatBackend(seed=config.seed),
        MockEmbeddingBackend(dim=config.embedding_dim, seed=config.seed),
        verbose_trace=verbose,
        recorder=recorder,
    )


def build_memory(problems, config: Config, log_sink=None, chat_backend=None):
    """Run the full mock construction pipeline; returns (builder, report)."""
    gateway = make_gateway(config, chat_backend=chat_backend)
    builder = MemoryBuilder(gateway, config, log_sink=log_sink)
    report = builder.build(problems, StubExecutor())
    return builder, report


@pytest.fixture(scope="session")
def scenario_store():
    """Store built from the 18-problem, 3-family scenario corpus."""
    config = make_config()
    builder, _ = build_memory(scenario_build_corpus(), config)
    return builder.to_store()


@pytest.fixture(scope="session")
def single_family_store():
    """Store whose 12 nodes all share one cluster pair (2 synthesis rounds)."""
    config = make_config()
    builder, _ = build_memory(single_cluster_corpus(12), config)
    return builder.to_store()


# ---------------------------------------------------------------------------
# Random valid stores (for persistence and retrieval property tests)
# ---------------------------------------------------------------------------

def random_unit(rng: random.Random, dim: int) -> Embedding:
    while True:
        values = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        if math.sqrt(sum(v * v for v in values)) > 1e-9:
            return Embedding.unit(values)


def _random_knowledge(rng: random.Random, sample_type: SampleType) -> Knowledge:
    def items(tag: str) -> tuple[str, ...]:
        return tuple(f"{tag} item {rng.randrange(1000)}" for _ in range(rng.randint(1, 2)))

    if sample_type is SampleType.A:
        return Knowledge(approach=items("approach"), checklist=items("checklist"))
    if sample_type is SampleType.C:
        return Knowledge(pitfall=items("pitfall"))
    return Knowledge(approach=items("approach"), checklist=items("checklist"),
                     pitfall=items("pitfall"))


def make_random_store(rng: random.Random, max_nodes: int = 30, dim: int = 6) -> MemoryStore:
    """A structurally valid store with random geometry and memberships."""
    n = rng.randint(1, max_nodes)
    m_count = rng.randint(1, max(1, n // 2))
    c_count = rng.randint(1, max(1, n // 2))
    nodes: dict[str, ExperienceNode] = {}
    m_members: dict[str, list[str]] = {f"m{i:04d}": [] for i in range(1, m_count + 1)}
    c_members: dict[str, list[str]] = {f"c{i:04d}": [] for i in range(1, c_count + 1)}
    m_ids, c_ids = list(m_members), list(c_members)
    edges: dict[tuple[str, str], int] = {}
    for i in range(1, n + 1):
        node_id = f"n{i:06d}"
        # Guarantee every cluster ends non-empty by cycling first.
        mc = m_ids[(i - 1) % m_count] if i <= max(m_count, c_count) else rng.choice(m_ids)
        cc = c_ids[(i - 1) % c_count] if i <= max(m_count, c_count) else rng.choice(c_ids)
        sample_type = rng.choice(list(SampleType))
        node = ExperienceNode(
            id=node_id,
            problem_id=f"p{i:04d}",
            sample_type=sample_type,
            modeling_text=f"modeling text {i}",
            coding_text=f"coding text {i}",
            e_m=random_unit(rng, dim),
            e_c=random_unit(rng, dim),
            phi=_random_knowledge(rng, sample_type),
            modeling_cluster=mc,
            coding_cluster=cc,
        )
        nodes[node_id] = node
        m_members[mc].append(node_id)
        c_members[cc].append(node_id)
        edges[(mc, cc)] = edges.get((mc, cc), 0) + 1

    threshold = 5

    def clusters_for(members: dict[str, list[str]], space: Space) -> dict[str, Cluster]:
        out = {}
        for cid, ids in members.items():
            if not ids:
                continue
            embeddings = [nodes[i].e_m if space is Space.MODELING else nodes[i].e_c
                          for i in ids]
            out[cid] = Cluster(
                id=cid,
                space=space,
                centroid=centroid_of(embeddings),
                members=list(ids),
                knowledge=_random_knowledge(rng, SampleType.B),
                knowledge_version=rng.randint(0, 3),
                pending_phis=[_random_knowledge(rng, SampleType.B)
                              for _ in range(rng.randint(0, threshold - 1))],
            )
        return out

    store = MemoryStore(
        dim=dim,
        nodes=nodes,
        modeling_clusters=clusters_for(m_members, Space.MODELING),
        coding_clusters=clusters_for(c_members, Space.CODING),
        graph=BipartiteGraph(edges),
        config_snapshot={
            "retrieval_top_k": 3, "knowledge_update_threshold": threshold,
            "max_paths": 3, "repair_limit": 2, "exec_timeout_seconds": 60.0,
            "max_classification_rounds": 3, "numeric_rel_tolerance": 1e-4,
        },
        provenance={"chat_model": "mock-chat", "embed_model": "mock-embed", "seed": 7},
    )
    store.validate()
    return store
