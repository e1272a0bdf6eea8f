"""Chat-completion and embedding access.

Three backends share one interface: an HTTP client speaking the ubiquitous
chat-completions / embeddings REST shapes, a deterministic offline mock used
by the whole test suite, and a scripted backend for scenario tests. The
gateway on top renders role prompts, records every call, parses structured
responses, and re-prompts once on malformed output.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
import re
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Sequence

import httpx

from .config import ProviderConfig
from .domain import ChatEvent, Embedding, Knowledge
from .prompts import LlmRole, format_knowledge, render_prompt


class ProviderError(RuntimeError):
    """Transport failure, empty completion, or backend misconfiguration."""


class MalformedCompletionError(ValueError):
    """Completion could not be parsed for its role, even after the retry."""


# ---------------------------------------------------------------------------
# Structured response parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifierResponse:
    kind: str  # "match" | "no_match" | "pass" | "fail"
    cluster_id: Optional[str] = None
    revision: Optional[str] = None


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)
_SECTION_HEADERS = {"APPROACH:": "approach", "CHECKLIST:": "checklist", "PITFALL:": "pitfall"}


def extract_fenced_block(text: str) -> Optional[str]:
    match = _FENCE_RE.search(text)
    if match is None:
        return None
    return match.group(1).strip("\n")


def extract_fenced_blocks(text: str) -> list[tuple[str, str]]:
    """All fenced blocks as (language tag, body) pairs."""
    out = []
    for m in re.finditer(r"```([a-zA-Z0-9_+-]*)\n(.*?)```", text, re.DOTALL):
        out.append((m.group(1), m.group(2).strip("\n")))
    return out


def parse_knowledge_sections(text: str) -> Knowledge:
    """Parse APPROACH:/CHECKLIST:/PITFALL: sections with "- " bullets.

    Multiple occurrences of a header accumulate, which lets the same parser
    read a single response or a concatenated batch of them.
    """
    tiers: dict[str, list[str]] = {"approach": [], "checklist": [], "pitfall": []}
    current: Optional[str] = None
    seen_header = False
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if line in _SECTION_HEADERS:
            current = _SECTION_HEADERS[line]
            seen_header = True
            continue
        if current and line.startswith("- "):
            item = line[2:].strip()
            if item:
                tiers[current].append(item)
    if not seen_header:
        raise MalformedCompletionError("no knowledge sections found")
    return Knowledge(
        approach=tuple(tiers["approach"]),
        checklist=tuple(tiers["checklist"]),
        pitfall=tuple(tiers["pitfall"]),
    )


_RANK_RE = re.compile(r"RANK:\s*([0-9]+(?:\s*,\s*[0-9]+)*)")
_MATCH_RE = re.compile(r"^MATCH(?:\s+(\S+))?\s*$")


def parse_structured(role: LlmRole, raw: str):
    """Parse a completion into its role-specific value.

    extractor/synthesizer -> Knowledge; verifier -> VerifierResponse;
    selector -> list of path indices; generator/fixer -> fenced text block.
    Raises MalformedCompletionError when the format contract is broken.
    """
    text = raw.strip()
    if not text:
        raise MalformedCompletionError(f"empty {role.value} completion")

    if role in (LlmRole.EXTRACTOR, LlmRole.SYNTHESIZER):
        return parse_knowledge_sections(text)

    if role is LlmRole.VERIFIER:
        first = text.splitlines()[0].strip()
        m = _MATCH_RE.match(first)
        if m:
            return VerifierResponse(kind="match", cluster_id=m.group(1))
        if first == "NO_MATCH":
            return VerifierResponse(kind="no_match")
        if first == "PASS":
            return VerifierResponse(kind="pass")
        if first.startswith("FAIL"):
            body = text[len(first):]
            revision = extract_fenced_block(body)
            if revision is None:
                revision = body.strip() or None
            if not revision:
                raise MalformedCompletionError("FAIL verdict without a revision")
            return VerifierResponse(kind="fail", revision=revision)
        raise MalformedCompletionError(f"unrecognized verifier verdict: {first!r}")

    if role is LlmRole.SELECTOR:
        m = _RANK_RE.search(text)
        if not m:
            raise MalformedCompletionError("selector response carries no RANK line")
        return [int(part) for part in m.group(1).split(",")]

    if role in (LlmRole.GENERATOR, LlmRole.FIXER):
        block = extract_fenced_block(text)
        if block is None or not block.strip():
            raise MalformedCompletionError(f"{role.value} response has no fenced block")
        return block

    raise ValueError(f"unhandled role {role!r}")


# ---------------------------------------------------------------------------
# Backend interfaces
# ---------------------------------------------------------------------------

class ChatBackend(Protocol):
    model_name: str

    def complete(self, role: LlmRole, prompt: str, slots: Mapping[str, str]) -> str: ...


class EmbeddingBackend(Protocol):
    model_name: str
    dim: int

    def embed(self, text: str) -> Sequence[float]: ...


# ---------------------------------------------------------------------------
# Deterministic mock backends
# ---------------------------------------------------------------------------

MOCK_MARKER_RE = re.compile(r"\[\[mock([^\]]*)\]\]")


@dataclass(frozen=True)
class MockMarker:
    """Outcome directive embedded in synthetic problem texts.

    ``bare`` drives generation without guidance, ``guided`` generation with
    non-empty cluster knowledge; ``ok@N`` succeeds from attempt N onward.
    """

    family: str = "generic"
    bare: str = "ok"
    guided: str = "ok"
    objective: float = 0.0
    requirements: tuple[tuple[str, float], ...] = ()

    def render(self) -> str:
        parts = [f"family={self.family}", f"bare={self.bare}", f"guided={self.guided}",
                 f"objective={self.objective!r}"]
        parts += [f"req:{name}={value!r}" for name, value in self.requirements]
        return "[[mock " + " ".join(parts) + "]]"


def parse_mock_marker(text: str) -> Optional[MockMarker]:
    m = MOCK_MARKER_RE.search(text)
    if not m:
        return None
    family, bare, guided, objective = "generic", "ok", "ok", 0.0
    reqs: list[tuple[str, float]] = []
    for token in m.group(1).split():
        key, _, value = token.partition("=")
        if key == "family":
            family = value
        elif key == "bare":
            bare = value
        elif key == "guided":
            guided = value
        elif key == "objective":
            objective = float(value)
        elif key.startswith("req:"):
            reqs.append((key[4:], float(value)))
    return MockMarker(family, bare, guided, objective, tuple(reqs))


def strip_mock_markers(text: str) -> str:
    return MOCK_MARKER_RE.sub("", text).strip()


_PARADIGM_RE = re.compile(r"paradigm=([a-z0-9_-]+)")
_CANDIDATE_LINE_RE = re.compile(r"^\[([^\]]+)\]\s*(.*)$")


def _resolve_outcome(spec: str, attempt: int) -> str:
    """Resolve an outcome spec ('ok', 'err', 'ok@2', ...) for an attempt."""
    if "@" in spec:
        base, _, threshold = spec.partition("@")
        return base if attempt >= int(threshold) else "err"
    return spec


class MockChatBackend:
    """Rule-driven offline chat backend; bit-deterministic and stateless."""

    def __init__(self, seed: int = 0, model_name: str = "mock-chat") -> None:
        self.seed = seed
        self.model_name = model_name

    def complete(self, role: LlmRole, prompt: str, slots: Mapping[str, str]) -> str:
        if role is LlmRole.EXTRACTOR:
            return self._extract(slots)
        if role is LlmRole.VERIFIER:
            return self._verify(slots)
        if role is LlmRole.SYNTHESIZER:
            return self._synthesize(slots)
        if role is LlmRole.SELECTOR:
            return self._select(slots)
        if role is LlmRole.GENERATOR:
            return self._generate(slots)
        if role is LlmRole.FIXER:
            return self._fix(slots)
        raise ValueError(f"mock has no rule for role {role!r}")

    # -- helpers ------------------------------------------------------------

    @staticmethod
    def _family_of(text: str) -> str:
        marker = parse_mock_marker(text)
        if marker:
            return marker.family
        tags = _PARADIGM_RE.findall(text.lower())
        return tags[0] if tags else "generic"

    @staticmethod
    def _slug_of(text: str) -> str:
        words = re.findall(r"[A-Za-z0-9]+", strip_mock_markers(text))
        return " ".join(words[:6]).lower()

    # -- role rules ----------------------------------------------------------

    def _extract(self, slots: Mapping[str, str]) -> str:
        task = slots["task"].lower()
        content = slots["content"]
        if task.startswith("split"):
            return self._reconstruct_split(content)
        family = self._family_of(content)
        if "approach" in task:
            item = f"Formulate a {family} model with explicit decision variables"
            return f"APPROACH:\n- {item}\nCHECKLIST:\nPITFALL:\n"
        if "checklist" in task:
            item = f"Confirm objective sense and constraint coverage for {family}"
            return f"APPROACH:\nCHECKLIST:\n- {item}\nPITFALL:\n"
        if "pitfall" in task:
            item = f"Do not relax integrality or drop limits in {family} instances"
            return f"APPROACH:\nCHECKLIST:\nPITFALL:\n- {item}\n"
        return "APPROACH:\nCHECKLIST:\nPITFALL:\n"

    @staticmethod
    def _reconstruct_split(content: str) -> str:
        lines = [ln for ln in content.splitlines() if ln.strip()]
        code_signals = ("import ", "print(", "# STUB", "def ", "raise ")
        code_start = None
        for i, line in enumerate(lines):
            if line.strip().startswith(code_signals):
                code_start = i
                break
        if code_start is None or code_start == 0 or len(lines) < 2:
            # Nothing to split into two non-empty parts; echo unfenced.
            return content
        model_part = "\n".join(lines[:code_start])
        code_part = "\n".join(lines[code_start:])
        return f"```model\n{model_part}\n```\n```python\n{code_part}\n```\n"

    def _verify(self, slots: Mapping[str, str]) -> str:
        task = slots["task"].lower()
        content = slots["content"]
        reference = slots["reference"]
        if "cluster" in task:
            content_tags = set(_PARADIGM_RE.findall(content.lower()))
            content_tags.add(self._family_of(content))
            content_tags.discard("generic")
            for line in reference.splitlines():
                m = _CANDIDATE_LINE_RE.match(line.strip())
                if not m:
                    continue
                cand_id, summary = m.group(1), m.group(2)
                cand_tags = set(_PARADIGM_RE.findall(summary.lower()))
                cand_tags.discard("generic")
                if content_tags & cand_tags:
                    return f"MATCH {cand_id}"
                if not content_tags and content.strip() == summary.strip():
                    return f"MATCH {cand_id}"
            return "NO_MATCH"
        # checklist-style verification of a draft
        if "INVALID" in content:
            lang = "python" if ("# STUB" in content or "print(" in content) else "model"
            revised = content.replace("INVALID", "fixed")
            return f"FAIL\n```{lang}\n{revised}\n```\n"
        return "PASS"

    def _synthesize(self, slots: Mapping[str, str]) -> str:
        merged = parse_knowledge_sections(slots["current"] + "\n" + slots["batch"])
        deduped = Knowledge(
            approach=_dedupe(merged.approach),
            checklist=_dedupe(merged.checklist),
            pitfall=_dedupe(merged.pitfall),
        )
        return format_knowledge(deduped)

    @staticmethod
    def _select(slots: Mapping[str, str]) -> str:
        count = sum(1 for line in slots["paths"].splitlines() if re.match(r"^\d+\)", line.strip()))
        return "RANK: " + ",".join(str(i) for i in range(count))

    def _generate(self, slots: Mapping[str, str]) -> str:
        task = slots["task"].lower()
        source = slots["input"]
        guidance = slots.get("guidance", "").strip()
        guided = bool(guidance) and guidance != "(none)"
        attempt = int(slots.get("attempt", "1") or "1")
        marker = parse_mock_marker(source) or MockMarker()
        if "code" in task:
            outcome = _resolve_outcome(marker.guided if guided else marker.bare, attempt)
            return f"```python\n{self._solver_script(marker, outcome)}\n```\n"
        head = f"Guided by: {guidance.splitlines()[0]}" if guided else "Unguided draft."
        body = (
            f"paradigm={marker.family} formulation\n"
            f"{head}\n"
            f"Decision variables, objective, and constraints for: {self._slug_of(source)}\n"
            f"{marker.render()}"
        )
        return f"```model\n{body}\n```\n"

    @staticmethod
    def _solver_script(marker: MockMarker, outcome: str) -> str:
        lines = [f"# mock solver script (paradigm={marker.family})"]
        if outcome == "ok" or outcome == "wrong":
            objective = marker.objective + (1.0 if outcome == "wrong" else 0.0)
            directive = f"# STUB: success objective={objective!r}"
            for name, value in marker.requirements:
                directive += f" {name}={value!r}"
            lines.append(directive)
            lines.append('print("===ANSWER_BEGIN===")')
            lines.append(f'print("objective={objective!r}")')
            for name, value in marker.requirements:
                lines.append(f'print("{name}={value!r}")')
            lines.append('print("===ANSWER_END===")')
        elif outcome == "err":
            lines.append("# STUB: runtime_error mock solver failure")
            lines.append('raise RuntimeError("mock solver failure")')
        elif outcome == "timeout":
            lines.append("# STUB: timeout")
            lines.append("import time")
            lines.append("time.sleep(3600)")
        elif outcome == "nonnum":
            lines.append("# STUB: non_numeric_output")
            lines.append('print("the solver prints prose, no answer block")')
        else:
            raise ValueError(f"unknown mock outcome spec {outcome!r}")
        return "\n".join(lines)

    @staticmethod
    def _fix(slots: Mapping[str, str]) -> str:
        code = slots["code"]
        swap = re.search(r"^# STUB-AFTER-REPAIR:\s*(.+)$", code, re.MULTILINE)
        if swap:
            fixed = re.sub(r"^# STUB:.*$", f"# STUB: {swap.group(1)}", code, count=1, flags=re.MULTILINE)
            fixed = re.sub(r"^# STUB-AFTER-REPAIR:.*$\n?", "", fixed, flags=re.MULTILINE)
        else:
            fixed = code + "\n# repair attempt"
        return f"```python\n{fixed}\n```\n"


def _dedupe(items: tuple[str, ...]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for item in items:
        seen.setdefault(item, None)
    return tuple(seen)


class MockEmbeddingBackend:
    """Seeded hash of token n-grams projected onto the unit sphere.

    Shared tokens between two texts raise their cosine similarity, giving
    tests controllable neighborhoods without a real embedding model.
    """

    def __init__(self, dim: int = 32, seed: int = 0, model_name: str = "mock-embed") -> None:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.model_name = model_name
        self._gram_cache: dict[str, list[float]] = {}

    def embed(self, text: str) -> list[float]:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        if not grams:
            grams = [text]
        acc = [0.0] * self.dim
        for gram in grams:
            vec = self._gram_vector(gram)
            for i in range(self.dim):
                acc[i] += vec[i]
        norm = math.sqrt(sum(v * v for v in acc))
        if norm == 0.0:
            return self._gram_vector("~empty~")
        return [v / norm for v in acc]

    def _gram_vector(self, gram: str) -> list[float]:
        cached = self._gram_cache.get(gram)
        if cached is None:
            digest = hashlib.sha256(f"{self.seed}|{gram}".encode("utf-8")).digest()
            rng = random.Random(int.from_bytes(digest[:8], "big"))
            cached = [rng.gauss(0.0, 1.0) for _ in range(self.dim)]
            self._gram_cache[gram] = cached
        return cached


class ScriptedChatBackend:
    """Test backend: either a handler function or a fixed response queue."""

    def __init__(
        self,
        handler: Optional[Callable[[LlmRole, str, Mapping[str, str]], str]] = None,
        queue: Optional[Sequence[str]] = None,
        fallback: Optional[ChatBackend] = None,
        model_name: str = "scripted-chat",
    ) -> None:
        self.handler = handler
        self.queue = list(queue) if queue is not None else None
        self.fallback = fallback
        self.model_name = model_name

    def complete(self, role: LlmRole, prompt: str, slots: Mapping[str, str]) -> str:
        if self.queue is not None:
            if not self.queue:
                raise ProviderError("scripted backend exhausted its queue")
            return self.queue.pop(0)
        if self.handler is not None:
            response = self.handler(role, prompt, slots)
            if response is not None:
                return response
        if self.fallback is not None:
            return self.fallback.complete(role, prompt, slots)
        raise ProviderError(f"scripted backend has no response for role {role.value}")


# ---------------------------------------------------------------------------
# HTTP backends
# ---------------------------------------------------------------------------

class _TokenBucket:
    def __init__(self, rate_per_second: float) -> None:
        self.rate = rate_per_second
        self.allowance = rate_per_second
        self.last = time.monotonic()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        now = time.monotonic()
        self.allowance = min(self.rate, self.allowance + (now - self.last) * self.rate)
        self.last = now
        if self.allowance < 1.0:
            wait = (1.0 - self.allowance) / self.rate
            time.sleep(wait)
            self.allowance = 0.0
        else:
            self.allowance -= 1.0


class _HttpBase:
    def __init__(
        self,
        config: ProviderConfig,
        api_key: Optional[str],
        transport: Optional[httpx.BaseTransport],
        wire_log: Optional[list] = None,
    ) -> None:
        config.validate()
        if not config.endpoint:
            raise ProviderError("http backend requires an endpoint")
        self.config = config
        self.model_name = config.model
        self.api_key = api_key
        self.wire_log = wire_log
        self._bucket = _TokenBucket(config.rate_limit_per_second)
        self._client = httpx.Client(
            transport=transport, timeout=config.request_timeout,
            base_url=config.endpoint.rstrip("/"),
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Optional[Exception] = None
        for attempt in range(self.config.retry_count + 1):
            self._bucket.acquire()
            try:
                response = self._client.post(path, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ProviderError(f"server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise ProviderError(f"request rejected: {response.status_code} {response.text[:200]}")
            data = response.json()
            if self.wire_log is not None:
                self.wire_log.append({"request": payload, "response": data})
            return data
        raise ProviderError(
            f"transport failed after {self.config.retry_count + 1} attempts: {last_error}"
        )

    def close(self) -> None:
        self._client.close()


class HttpChatBackend(_HttpBase):
    """Chat-completions client: POST {endpoint}/chat/completions."""

    def __init__(self, config: ProviderConfig, api_key: Optional[str] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 wire_log: Optional[list] = None) -> None:
        super().__init__(config, api_key if api_key is not None else os.getenv("OPTMEM_API_KEY"),
                         transport, wire_log)

    def complete(self, role: LlmRole, prompt: str, slots: Mapping[str, str]) -> str:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        data = self._post("/chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat-completions response: {exc}") from exc
        if not isinstance(content, str) or not content.strip():
            raise ProviderError("backend returned an empty completion")
        return content


class HttpEmbeddingBackend(_HttpBase):
    """Embeddings client: POST {endpoint}/embeddings."""

    def __init__(self, config: ProviderConfig, dim: int, api_key: Optional[str] = None,
                 transport: Optional[httpx.BaseTransport] = None,
                 wire_log: Optional[list] = None) -> None:
        key = api_key if api_key is not None else (
            os.getenv("OPTMEM_EMBED_API_KEY") or os.getenv("OPTMEM_API_KEY"))
        super().__init__(config, key, transport, wire_log)
        self.dim = dim

    def embed(self, text: str) -> list[float]:
        payload = {"model": self.config.model, "input": text}
        data = self._post("/embeddings", payload)
        try:
            vector = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embeddings response: {exc}") from exc
        if not isinstance(vector, list) or len(vector) != self.dim:
            raise ProviderError(
                f"embedding dim mismatch: expected {self.dim}, got {len(vector) if isinstance(vector, list) else 'non-list'}"
            )
        return [float(v) for v in vector]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------

_FORMAT_REMINDER = "\n\nREMINDER: your previous reply broke the response format. Follow it exactly."


class ProviderGateway:
    """Uniform access to one chat backend and one embedding backend.

    Renders role prompts, records every chat call through the recorder
    exactly once (retries are their own events), and exposes structured
    parsing with one lenient re-prompt.
    """

    def __init__(
        self,
        chat_backend: ChatBackend,
        embed_backend: EmbeddingBackend,
        verbose_trace: bool = False,
        recorder: Optional[Callable[[ChatEvent], None]] = None,
    ) -> None:
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.verbose_trace = verbose_trace
        self.recorder = recorder
        self._seq = 0

    @property
    def dim(self) -> int:
        return self.embed_backend.dim

    def chat(self, role: LlmRole, slots: Mapping[str, str], purpose: str = "") -> str:
        prompt = render_prompt(role, slots)
        return self._complete(role, prompt, slots, purpose)

    def _complete(self, role: LlmRole, prompt: str, slots: Mapping[str, str], purpose: str) -> str:
        response = self.chat_backend.complete(role, prompt, slots)
        if not response or not response.strip():
            raise ProviderError(f"empty completion for role {role.value}")
        self._record(role, purpose, prompt, response)
        return response

    def chat_structured(self, role: LlmRole, slots: Mapping[str, str], purpose: str = ""):
        """Chat and parse; on malformed output, re-prompt once with a format
        reminder before giving up."""
        prompt = render_prompt(role, slots)
        raw = self._complete(role, prompt, slots, purpose)
        try:
            return parse_structured(role, raw)
        except MalformedCompletionError:
            retry_raw = self._complete(role, prompt + _FORMAT_REMINDER, slots, purpose + "/retry")
            return parse_structured(role, retry_raw)

    def embed(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        values = self.embed_backend.embed(text)
        if len(values) != self.embed_backend.dim:
            raise ProviderError(
                f"embedding dim mismatch: backend declared {self.embed_backend.dim}, got {len(values)}"
            )
        return Embedding.unit(values)

    def _record(self, role: LlmRole, purpose: str, prompt: str, response: str) -> None:
        if self.recorder is None:
            return
        self._seq += 1
        self.recorder(ChatEvent(
            seq=self._seq,
            role=role.value,
            purpose=purpose,
            prompt=prompt if self.verbose_trace else None,
            response=response if self.verbose_trace else None,
        ))


def build_backends(config) -> tuple[ChatBackend, EmbeddingBackend]:
    """Construct the chat and embedding backends a Config names."""
    if config.provider == "mock":
        chat = MockChatBackend(seed=config.seed, model_name=config.chat.model)
        embed_seed = _stable_seed(config.embed.model, config.seed)
        embed = MockEmbeddingBackend(dim=config.embedding_dim, seed=embed_seed,
                                     model_name=config.embed.model)
    elif config.provider == "http":
        chat = HttpChatBackend(config.chat)
        embed = HttpEmbeddingBackend(config.embed, dim=config.embedding_dim)
    else:
        raise ProviderError(f"unknown provider kind {config.provider!r}")
    return chat, embed


def build_gateway(config, verbose_trace: bool = False,
                  recorder: Optional[Callable[[ChatEvent], None]] = None) -> ProviderGateway:
    chat, embed = build_backends(config)
    return ProviderGateway(chat, embed, verbose_trace=verbose_trace, recorder=recorder)


def _stable_seed(model_name: str, seed: int) -> int:
    # The embedding space is a property of the embedding model, not of the
    # chat backend, so cross-model transfer keeps retrieval geometry intact.
    digest = hashlib.sha256(f"{model_name}|{seed}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
