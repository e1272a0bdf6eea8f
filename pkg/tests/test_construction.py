"""Construction pipeline: trajectories, decomposition, clustering, synthesis."""

from __future__ import annotations

import random

import pytest

from conftest import build_memory, make_config, make_gateway
from optmem.construction import (
    DecomposeError,
    MemoryBuilder,
    brute_force_cooccurrence,
    compose_solution,
    decompose,
)
from optmem.corpus import scenario_build_corpus, single_cluster_corpus, synthetic_corpus
from optmem.domain import (
    Embedding,
    GroundTruth,
    Problem,
    SampleType,
    Space,
    centroid_of,
    classify_trajectory,
    similarity,
)
from optmem.prompts import LlmRole
from optmem.providers import MockChatBackend, MockMarker, ScriptedChatBackend
from optmem.sandbox import StubExecutor
from optmem.store import save


def _problem(pid: str, bare: str, objective: float = 10.0,
             family: str = "knapsack") -> Problem:
    marker = MockMarker(family=family, bare=bare, guided="ok", objective=objective)
    return Problem(
        id=pid,
        text=f"A {family} problem with several named items. {marker.render()}",
        ground_truth=GroundTruth(objective=objective),
        source="unit",
    )


def _builder(config=None, chat_backend=None, log_sink=None) -> MemoryBuilder:
    config = config or make_config()
    return MemoryBuilder(make_gateway(config, chat_backend=chat_backend), config,
                         log_sink=log_sink)


# ---------------------------------------------------------------------------
# trajectory collection
# ---------------------------------------------------------------------------

def test_trajectory_always_correct_confirmed_as_type_a():
    builder = _builder()
    trajectories = builder.collect_trajectories([_problem("p1", "ok")], StubExecutor())
    attempts = trajectories["p1"]
    assert [a.correct for a in attempts] == [True, True]  # confirmation attempt ran
    assert classify_trajectory(attempts, 3) is SampleType.A


def test_trajectory_recovered_on_second_round_is_type_b():
    builder = _builder()
    attempts = builder.collect_trajectories([_problem("p1", "ok@2")], StubExecutor())["p1"]
    assert [a.correct for a in attempts] == [False, True]
    assert classify_trajectory(attempts, 3) is SampleType.B


def test_trajectory_persistent_failure_is_type_c():
    builder = _builder()
    attempts = builder.collect_trajectories([_problem("p1", "err")], StubExecutor())["p1"]
    assert [a.correct for a in attempts] == [False, False, False]
    assert classify_trajectory(attempts, 3) is SampleType.C


def test_wrong_answer_success_counts_as_incorrect():
    builder = _builder()
    attempts = builder.collect_trajectories([_problem("p1", "wrong")], StubExecutor())["p1"]
    assert all(a.execution.ok for a in attempts)       # executions succeeded
    assert all(not a.correct for a in attempts)        # but answers were wrong
    assert classify_trajectory(attempts, 3) is SampleType.C


def test_trajectory_requires_ground_truth():
    builder = _builder()
    unlabeled = Problem(id="u", text="solve it", source="unit")
    with pytest.raises(Exception, match="ground truth"):
        builder.collect_trajectories([unlabeled], StubExecutor())


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

def test_decompose_fenced_solution_verbatim():
    solution = compose_solution("the model\nwith two lines", "print('code')")
    modeling, coding = decompose(solution)
    assert modeling == "the model\nwith two lines"
    assert coding == "print('code')"


def test_decompose_unlabeled_solution_via_extractor():
    config = make_config()
    gateway = make_gateway(config)
    modeling, coding = decompose(
        "Maximize the total value of chosen parcels\nprint('solver output')", gateway)
    assert modeling.strip() and coding.strip()
    assert "print" in coding and "print" not in modeling


def test_decompose_code_only_blob_is_dropped():
    config = make_config()
    gateway = make_gateway(config)
    with pytest.raises(DecomposeError):
        decompose("print('only code, nothing else')", gateway)
    with pytest.raises(DecomposeError):
        decompose("no fences and no way to split", None)


def test_builder_counts_dropped_nodes(monkeypatch):
    import optmem.construction as construction_module

    def always_fail(solution, gateway=None):
        raise DecomposeError("forced")

    monkeypatch.setattr(construction_module, "decompose", always_fail)
    events = []
    builder = _builder(log_sink=events.append)
    report = builder.build([_problem("p1", "ok")], StubExecutor())
    assert report.dropped == 1
    assert report.nodes == 0
    assert any(e["event"] == "dropped" for e in events)


# ---------------------------------------------------------------------------
# knowledge extraction
# ---------------------------------------------------------------------------

def test_extract_phi_tier_sources():
    builder = _builder()
    executor = StubExecutor()
    problems = {
        SampleType.A: _problem("pa", "ok"),
        SampleType.B: _problem("pb", "ok@2"),
        SampleType.C: _problem("pc", "err"),
    }
    for expected_type, problem in problems.items():
        attempts = builder.collect_trajectories([problem], executor)[problem.id]
        sample_type = classify_trajectory(attempts, 3)
        assert sample_type is expected_type
        phi = builder.extract_phi(problem, sample_type, attempts)
        if sample_type is SampleType.A:
            assert phi.approach and phi.checklist and not phi.pitfall
        elif sample_type is SampleType.B:
            assert phi.approach and phi.checklist and phi.pitfall
        else:
            assert not phi.approach and not phi.checklist and phi.pitfall


def test_extractor_failure_yields_empty_tier():
    def handler(role, prompt, slots):
        if role is LlmRole.EXTRACTOR:
            return "no sections whatsoever"
        return None

    chat = ScriptedChatBackend(handler=handler, fallback=MockChatBackend())
    builder = _builder(chat_backend=chat)
    problem = _problem("p1", "ok")
    attempts = builder.collect_trajectories([problem], StubExecutor())["p1"]
    phi = builder.extract_phi(problem, SampleType.A, attempts)
    assert phi.empty  # tiers are dropped, never fabricated


# ---------------------------------------------------------------------------
# cluster assignment
# ---------------------------------------------------------------------------

def test_assign_cluster_empty_store_creates_with_centroid_equal_embedding():
    builder = _builder()
    e = builder.gateway.embed("paradigm=knapsack parcels")
    cid, created = builder.assign_cluster("n000001", e, "paradigm=knapsack parcels",
                                          Space.MODELING)
    assert created and cid == "m0001"
    assert builder.modeling_clusters[cid].centroid == e


def test_assign_cluster_same_family_joins_and_updates_centroid():
    builder = _builder()
    texts = ["paradigm=knapsack parcels one", "paradigm=knapsack parcels two"]
    embeddings = [builder.gateway.embed(t) for t in texts]
    builder.assign_cluster("n000001", embeddings[0], texts[0], Space.MODELING)
    cid, created = builder.assign_cluster("n000002", embeddings[1], texts[1], Space.MODELING)
    assert not created and cid == "m0001"
    cluster = builder.modeling_clusters[cid]
    assert cluster.members == ["n000001", "n000002"]
    assert cluster.centroid == centroid_of(embeddings)


def test_assign_cluster_new_family_creates_new_cluster():
    builder = _builder()
    a = builder.gateway.embed("paradigm=knapsack parcels")
    b = builder.gateway.embed("paradigm=assignment workers tasks")
    builder.assign_cluster("n000001", a, "paradigm=knapsack parcels", Space.MODELING)
    cid, created = builder.assign_cluster("n000002", b, "paradigm=assignment workers tasks",
                                          Space.MODELING)
    assert created and cid == "m0002"


def test_assignment_verifier_malformed_treated_as_no_match():
    def handler(role, prompt, slots):
        if role is LlmRole.VERIFIER and "cluster" in slots.get("task", ""):
            return "hmm, unclear"
        return None

    builder = _builder(chat_backend=ScriptedChatBackend(handler=handler,
                                                        fallback=MockChatBackend()))
    a = builder.gateway.embed("paradigm=knapsack parcels")
    builder.assign_cluster("n000001", a, "paradigm=knapsack parcels", Space.MODELING)
    cid, created = builder.assign_cluster("n000002", a, "paradigm=knapsack parcels",
                                          Space.MODELING)
    assert created and cid == "m0002"  # conservative over-split


def test_top_k_candidates_match_exhaustive_scan():
    config = make_config()
    builder, _ = build_memory(scenario_build_corpus(), config)
    rng = random.Random(4)
    for _ in range(25):
        query = Embedding.unit([rng.gauss(0, 1) for _ in range(config.embedding_dim)])
        got = [c.id for c in builder.top_k_clusters(query, Space.MODELING, 2)]
        oracle = [
            c.id for c in sorted(
                builder.modeling_clusters.values(),
                key=lambda c: (-similarity(query, c.centroid), c.id),
            )
        ][:2]
        assert got == oracle


# ---------------------------------------------------------------------------
# ingestion invariants
# ---------------------------------------------------------------------------

def test_first_node_base_case():
    builder, report = build_memory(single_cluster_corpus(1), make_config())
    assert report.nodes == 1
    assert report.modeling_clusters == 1 and report.coding_clusters == 1
    assert builder.graph.total_weight() == 1
    assert len(builder.graph) == 1


def test_same_pair_nodes_accumulate_one_edge():
    builder, report = build_memory(single_cluster_corpus(10), make_config())
    assert report.nodes == 10
    assert len(builder.graph) == 1
    ((key, weight),) = builder.graph.edges.items()
    assert weight == 10
    assert brute_force_cooccurrence(list(builder.nodes.values())) == builder.graph.edges


def test_ingest_invariants_on_mixed_corpus():
    builder, report = build_memory(scenario_build_corpus(), make_config())
    assert report.nodes == 18 and report.dropped == 0
    assert report.type_counts == {"A": 12, "B": 3, "C": 3}
    assert builder.graph.total_weight() == 18
    assert brute_force_cooccurrence(list(builder.nodes.values())) == builder.graph.edges
    for node in builder.nodes.values():
        assert node.id in builder.modeling_clusters[node.modeling_cluster].members
        assert node.id in builder.coding_clusters[node.coding_cluster].members
    for clusters, space in ((builder.modeling_clusters, Space.MODELING),
                            (builder.coding_clusters, Space.CODING)):
        for cluster in clusters.values():
            embeddings = [
                builder.nodes[m].e_m if space is Space.MODELING else builder.nodes[m].e_c
                for m in cluster.members
            ]
            assert cluster.centroid == centroid_of(embeddings)


def test_each_family_forms_its_own_cluster_pair():
    builder, report = build_memory(scenario_build_corpus(), make_config())
    assert report.modeling_clusters == 3
    assert report.coding_clusters == 3
    assert len(builder.graph) == 3


# ---------------------------------------------------------------------------
# knowledge synthesis protocol
# ---------------------------------------------------------------------------

def test_twelve_phis_fire_two_syntheses_and_leave_two_pending():
    builder, report = build_memory(single_cluster_corpus(12), make_config())
    (modeling,) = builder.modeling_clusters.values()
    (coding,) = builder.coding_clusters.values()
    for cluster in (modeling, coding):
        assert cluster.knowledge_version == 2
        assert len(cluster.pending_phis) == 2
        assert cluster.knowledge.approach  # synthesized content landed
    assert report.synthesis_events == 4  # two per space


def test_synthesis_event_count_scales_with_threshold():
    config = make_config(knowledge_update_threshold=5)
    builder, _ = build_memory(single_cluster_corpus(9), config)
    (modeling,) = builder.modeling_clusters.values()
    assert modeling.knowledge_version == 1  # floor(9 / 5)
    assert len(modeling.pending_phis) == 4


def test_failed_synthesis_keeps_version_and_pending():
    def handler(role, prompt, slots):
        if role is LlmRole.SYNTHESIZER:
            return "not a knowledge block"
        return None

    chat = ScriptedChatBackend(handler=handler, fallback=MockChatBackend())
    builder = _builder(chat_backend=chat)
    report = builder.build(single_cluster_corpus(5), StubExecutor())
    (modeling,) = builder.modeling_clusters.values()
    assert modeling.knowledge_version == 0
    assert len(modeling.pending_phis) == 5  # retained for the next crossing
    assert report.synthesis_events == 0


def test_synthesized_knowledge_preserves_pitfalls():
    builder, _ = build_memory(scenario_build_corpus(), make_config())
    knapsack_clusters = [
        c for c in builder.modeling_clusters.values()
        if any("knapsack" in item for item in c.knowledge.approach)
    ]
    assert knapsack_clusters
    assert knapsack_clusters[0].knowledge.pitfall  # failure-derived warnings kept


# ---------------------------------------------------------------------------
# determinism and logging
# ---------------------------------------------------------------------------

def test_construction_deterministic_and_byte_identical(tmp_path):
    corpus = synthetic_corpus(15, seed=11)
    store_a = build_memory(corpus, make_config())[0].to_store()
    store_b = build_memory(corpus, make_config())[0].to_store()
    assert store_a.semantically_equal(store_b)
    save(store_a, tmp_path / "a")
    save(store_b, tmp_path / "b")
    for name in ("manifest.json", "nodes.jsonl", "clusters.jsonl", "edges.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_construction_log_records_every_node_and_synthesis():
    events = []
    builder = MemoryBuilder(make_gateway(make_config()), make_config(),
                            log_sink=events.append)
    builder.build(single_cluster_corpus(5), StubExecutor())
    node_events = [e for e in events if e["event"] == "node"]
    assert len(node_events) == 5
    for e in node_events:
        assert {"node", "problem", "sample_type", "modeling_cluster",
                "coding_cluster", "edge_weight"} <= set(e)
    assert sum(1 for e in events if e["event"] == "synthesis") == 2  # one per space
