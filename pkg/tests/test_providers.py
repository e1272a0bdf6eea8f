"""Provider gateway: mock determinism, structured parsing, wire protocol."""

from __future__ import annotations

import json
import math

import httpx
import pytest

from optmem.config import ProviderConfig
from optmem.domain import Knowledge
from optmem.prompts import LlmRole, PromptError, format_knowledge, render_prompt
from optmem.providers import (
    HttpChatBackend,
    HttpEmbeddingBackend,
    MalformedCompletionError,
    MockChatBackend,
    MockEmbeddingBackend,
    MockMarker,
    ProviderError,
    ProviderGateway,
    ScriptedChatBackend,
    VerifierResponse,
    parse_mock_marker,
    parse_structured,
    strip_mock_markers,
)


def _gateway(chat=None, embed=None, **kwargs) -> ProviderGateway:
    return ProviderGateway(
        chat or MockChatBackend(),
        embed or MockEmbeddingBackend(dim=16, seed=1),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# mock embeddings
# ---------------------------------------------------------------------------

def test_mock_embedding_deterministic():
    backend = MockEmbeddingBackend(dim=16, seed=3)
    assert backend.embed("abc") == backend.embed("abc")
    fresh = MockEmbeddingBackend(dim=16, seed=3)
    assert backend.embed("knapsack of parcels") == fresh.embed("knapsack of parcels")


def test_mock_embedding_unit_norm():
    backend = MockEmbeddingBackend(dim=24, seed=5)
    for text in ("a", "longer text with tokens", "12 numbers 9"):
        norm = math.sqrt(sum(v * v for v in backend.embed(text)))
        assert abs(norm - 1.0) <= 1e-9


def test_mock_embedding_shared_tokens_raise_similarity():
    gw = _gateway()
    a = gw.embed("knapsack parcels capacity weight value")
    b = gw.embed("knapsack parcels capacity weight limit")
    c = gw.embed("workers tasks cost matrix minimize")
    from optmem.domain import similarity

    assert similarity(a, b) > similarity(a, c)


def test_gateway_embed_rejects_empty_text():
    with pytest.raises(ValueError):
        _gateway().embed("   ")


# ---------------------------------------------------------------------------
# structured parsing
# ---------------------------------------------------------------------------

def test_selector_rank_parse():
    assert parse_structured(LlmRole.SELECTOR, "RANK: 2,0,1") == [2, 0, 1]
    assert parse_structured(LlmRole.SELECTOR, "thinking...\nRANK: 1 , 0") == [1, 0]


def test_selector_garbage_is_malformed():
    with pytest.raises(MalformedCompletionError):
        parse_structured(LlmRole.SELECTOR, "garbage")


def test_verifier_verdict_parse():
    assert parse_structured(LlmRole.VERIFIER, "PASS") == VerifierResponse(kind="pass")
    assert parse_structured(LlmRole.VERIFIER, "NO_MATCH") == VerifierResponse(kind="no_match")
    got = parse_structured(LlmRole.VERIFIER, "MATCH m0002")
    assert got.kind == "match" and got.cluster_id == "m0002"
    fail = parse_structured(LlmRole.VERIFIER, "FAIL\n```model\nrevised text\n```")
    assert fail.kind == "fail" and fail.revision == "revised text"
    with pytest.raises(MalformedCompletionError):
        parse_structured(LlmRole.VERIFIER, "maybe?")
    with pytest.raises(MalformedCompletionError):
        parse_structured(LlmRole.VERIFIER, "FAIL")


def test_extractor_sections_parse():
    raw = "APPROACH:\n- use a model\nCHECKLIST:\n- check bounds\nPITFALL:\n"
    knowledge = parse_structured(LlmRole.EXTRACTOR, raw)
    assert knowledge == Knowledge(approach=("use a model",), checklist=("check bounds",))
    with pytest.raises(MalformedCompletionError):
        parse_structured(LlmRole.EXTRACTOR, "no sections here")


def test_generator_fenced_block_parse():
    assert parse_structured(LlmRole.GENERATOR, "```python\nx = 1\n```") == "x = 1"
    with pytest.raises(MalformedCompletionError):
        parse_structured(LlmRole.GENERATOR, "bare text, no fence")


def test_knowledge_format_round_trips():
    k = Knowledge(approach=("a1", "a2"), checklist=("c1",), pitfall=("p1",))
    assert parse_structured(LlmRole.SYNTHESIZER, format_knowledge(k)) == k


# ---------------------------------------------------------------------------
# mock chat rules
# ---------------------------------------------------------------------------

def test_mock_verifier_exact_match_rule():
    gw = _gateway()
    slots = {"task": "cluster membership check", "content": "LP",
             "reference": "[m0001] LP"}
    assert gw.chat(LlmRole.VERIFIER, slots).startswith("MATCH")
    slots["reference"] = "[m0001] CP"
    assert gw.chat(LlmRole.VERIFIER, slots) == "NO_MATCH"


def test_mock_verifier_paradigm_match_rule():
    gw = _gateway()
    slots = {
        "task": "cluster membership check",
        "content": "paradigm=knapsack formulation for parcels",
        "reference": "[m0001] paradigm=assignment workers\n[m0002] paradigm=knapsack parcels",
    }
    assert gw.chat(LlmRole.VERIFIER, slots) == "MATCH m0002"


def test_mock_verifier_pass_fail_rule():
    gw = _gateway()
    ok = {"task": "checklist review", "content": "clean draft", "reference": "- rule"}
    assert gw.chat(LlmRole.VERIFIER, ok) == "PASS"
    bad = {"task": "checklist review", "content": "INVALID draft", "reference": "- rule"}
    parsed = parse_structured(LlmRole.VERIFIER, gw.chat(LlmRole.VERIFIER, bad))
    assert parsed.kind == "fail"
    assert "fixed draft" in parsed.revision


def test_mock_chat_deterministic():
    slots = {"task": "extract approach items", "content": "paradigm=knapsack things",
             "context": "type A"}
    a = MockChatBackend(seed=9).complete(LlmRole.EXTRACTOR, "p", slots)
    b = MockChatBackend(seed=9).complete(LlmRole.EXTRACTOR, "p", slots)
    assert a == b


def test_mock_synthesizer_union_semantics():
    gw = _gateway()
    phi = Knowledge(pitfall=("watch the capacity bound",))
    batch = "\n".join(format_knowledge(phi) for _ in range(5))
    raw = gw.chat(LlmRole.SYNTHESIZER, {"current": format_knowledge(Knowledge()), "batch": batch})
    merged = parse_structured(LlmRole.SYNTHESIZER, raw)
    assert merged.pitfall == ("watch the capacity bound",)  # deduplicated

    distinct = "\n".join(
        format_knowledge(Knowledge(pitfall=(f"pitfall {i}",))) for i in range(5)
    )
    merged2 = parse_structured(
        LlmRole.SYNTHESIZER,
        gw.chat(LlmRole.SYNTHESIZER, {"current": format_knowledge(Knowledge()), "batch": distinct}),
    )
    assert len(merged2.pitfall) == 5


def test_mock_generator_marker_flow():
    gw = _gateway()
    marker = MockMarker(family="knapsack", bare="err", guided="ok", objective=70.0)
    problem = f"Pick parcels. {marker.render()}"
    model = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "model formulation", "attempt": "1", "input": problem, "guidance": "(none)"}))
    assert "paradigm=knapsack" in model
    assert parse_mock_marker(model) == marker  # marker passes through verbatim

    bare_code = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "solver code", "attempt": "1", "input": model, "guidance": ""}))
    assert "# STUB: runtime_error" in bare_code

    guided_code = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "solver code", "attempt": "1", "input": model, "guidance": "- use knapsack"}))
    assert "# STUB: success objective=70.0" in guided_code


def test_mock_generator_round_threshold():
    gw = _gateway()
    marker = MockMarker(family="knapsack", bare="ok@2", guided="ok", objective=5.0)
    model = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "model formulation", "attempt": "1", "input": marker.render(),
        "guidance": ""}))
    first = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "solver code", "attempt": "1", "input": model, "guidance": ""}))
    second = parse_structured(LlmRole.GENERATOR, gw.chat(LlmRole.GENERATOR, {
        "task": "solver code", "attempt": "2", "input": model, "guidance": ""}))
    assert "runtime_error" in first
    assert "success objective=5.0" in second


def test_mock_fixer_rules():
    gw = _gateway()
    code = "# STUB: runtime_error\n# STUB-AFTER-REPAIR: success objective=3.0\nraise RuntimeError()"
    fixed = parse_structured(LlmRole.FIXER, gw.chat(LlmRole.FIXER, {
        "error": "boom", "pitfalls": "(none)", "checklist": "(none)", "code": code}))
    assert "# STUB: success objective=3.0" in fixed
    assert "STUB-AFTER-REPAIR" not in fixed

    plain = "# STUB: runtime_error\nraise RuntimeError()"
    fixed2 = parse_structured(LlmRole.FIXER, gw.chat(LlmRole.FIXER, {
        "error": "boom", "pitfalls": "(none)", "checklist": "(none)", "code": plain}))
    assert fixed2 != plain  # the mock always applies a visible patch


def test_marker_strip():
    marker = MockMarker(family="knapsack").render()
    assert strip_mock_markers(f"before {marker} after") == "before  after".strip()


# ---------------------------------------------------------------------------
# gateway behavior
# ---------------------------------------------------------------------------

def test_prompt_missing_slot_is_hard_error():
    with pytest.raises(PromptError):
        render_prompt(LlmRole.SELECTOR, {"problem": "p"})


def test_chat_structured_retries_once_then_raises():
    events = []
    gw = ProviderGateway(
        ScriptedChatBackend(queue=["garbage", "RANK: 1,0"]),
        MockEmbeddingBackend(dim=8),
        recorder=events.append,
    )
    assert gw.chat_structured(LlmRole.SELECTOR, {"problem": "p", "paths": "0) a\n1) b"}) == [1, 0]
    assert [e.purpose for e in events] == ["", "/retry"]

    gw2 = ProviderGateway(ScriptedChatBackend(queue=["junk", "more junk"]),
                          MockEmbeddingBackend(dim=8))
    with pytest.raises(MalformedCompletionError):
        gw2.chat_structured(LlmRole.SELECTOR, {"problem": "p", "paths": "0) a"})


def test_every_chat_call_recorded_once_with_role():
    events = []
    gw = _gateway(recorder=events.append, verbose_trace=True)
    gw.chat(LlmRole.VERIFIER, {"task": "checklist review", "content": "x", "reference": "y"},
            purpose="model_verification")
    gw.chat(LlmRole.SELECTOR, {"problem": "p", "paths": "0) a"}, purpose="path_ranking")
    assert [(e.role, e.purpose) for e in events] == [
        ("verifier", "model_verification"), ("selector", "path_ranking")]
    assert events[0].prompt and events[0].response
    assert [e.seq for e in events] == [1, 2]


def test_non_verbose_trace_omits_bodies():
    events = []
    gw = _gateway(recorder=events.append, verbose_trace=False)
    gw.chat(LlmRole.VERIFIER, {"task": "checklist review", "content": "x", "reference": "y"})
    assert events[0].prompt is None and events[0].response is None


# ---------------------------------------------------------------------------
# HTTP wire protocol (local stub transport)
# ---------------------------------------------------------------------------

def _chat_config(**kwargs) -> ProviderConfig:
    defaults = dict(endpoint="http://test/v1", model="m1", retry_count=1)
    defaults.update(kwargs)
    return ProviderConfig(**defaults)


def test_http_chat_contract():
    captured = {}

    def handler(request: httpx.Request) -> httpx.Response:
        captured["path"] = request.url.path
        captured["body"] = json.loads(request.content)
        return httpx.Response(200, json={
            "choices": [{"message": {"role": "assistant", "content": "PASS"}}]})

    backend = HttpChatBackend(_chat_config(), api_key="k",
                              transport=httpx.MockTransport(handler))
    out = backend.complete(LlmRole.VERIFIER, "prompt text", {})
    assert out == "PASS"
    assert captured["path"] == "/v1/chat/completions"
    assert captured["body"]["model"] == "m1"
    assert captured["body"]["messages"] == [{"role": "user", "content": "prompt text"}]


def test_http_chat_retries_on_server_error():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(500, text="boom")
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "ok"}}]})

    backend = HttpChatBackend(_chat_config(), transport=httpx.MockTransport(handler))
    assert backend.complete(LlmRole.VERIFIER, "p", {}) == "ok"
    assert calls["n"] == 2


def test_http_chat_empty_completion_is_provider_error():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"choices": [{"message": {"content": "  "}}]})

    backend = HttpChatBackend(_chat_config(), transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderError):
        backend.complete(LlmRole.VERIFIER, "p", {})


def test_http_chat_gives_up_after_retries():
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("refused")

    backend = HttpChatBackend(_chat_config(retry_count=2),
                              transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderError, match="3 attempts"):
        backend.complete(LlmRole.VERIFIER, "p", {})


def test_http_embedding_contract_and_dim_check():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        assert request.url.path == "/v1/embeddings"
        assert body == {"model": "e1", "input": "some text"}
        return httpx.Response(200, json={"data": [{"embedding": [1.0, 2.0, 2.0]}]})

    backend = HttpEmbeddingBackend(_chat_config(model="e1"), dim=3,
                                   transport=httpx.MockTransport(handler))
    assert backend.embed("some text") == [1.0, 2.0, 2.0]

    wrong = HttpEmbeddingBackend(_chat_config(model="e1"), dim=4,
                                 transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderError, match="dim"):
        wrong.embed("some text")


def test_http_wire_log_captures_bodies_when_enabled():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"choices": [{"message": {"content": "PASS"}}]})

    wire_log = []
    backend = HttpChatBackend(_chat_config(), transport=httpx.MockTransport(handler),
                              wire_log=wire_log)
    backend.complete(LlmRole.VERIFIER, "p", {})
    assert len(wire_log) == 1
    assert wire_log[0]["request"]["messages"][0]["content"] == "p"
    assert wire_log[0]["response"]["choices"][0]["message"]["content"] == "PASS"


def test_token_bucket_limits_request_rate():
    import time as time_module

    from optmem.providers import _TokenBucket

    bucket = _TokenBucket(rate_per_second=10.0)
    bucket.allowance = 0.0  # burst capacity spent
    started = time_module.monotonic()
    bucket.acquire()
    elapsed = time_module.monotonic() - started
    assert elapsed >= 0.08  # refilling one token at 10 rps takes ~0.1s

    unlimited = _TokenBucket(rate_per_second=0.0)
    started = time_module.monotonic()
    for _ in range(100):
        unlimited.acquire()
    assert time_module.monotonic() - started < 0.05
