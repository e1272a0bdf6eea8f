"""Prompt templates, one per LLM role.

Each role binds exactly one template; the varying uses of a role (e.g. the
verifier checking cluster membership vs. checking a draft against a
checklist) are expressed through the ``task`` slot, not through extra
templates. Knowledge items are interpolated verbatim so traces can be
audited for the guidance that was actually shown to the backend.
"""

from __future__ import annotations

from enum import Enum
from string import Template
from typing import Iterable, Mapping

from .domain import Knowledge


class LlmRole(Enum):
    EXTRACTOR = "extractor"
    VERIFIER = "verifier"
    SYNTHESIZER = "synthesizer"
    SELECTOR = "selector"
    GENERATOR = "generator"
    FIXER = "fixer"


class PromptError(ValueError):
    pass


_TEMPLATES: dict[LlmRole, Template] = {
    LlmRole.EXTRACTOR: Template(
        "You analyze optimization problem-solving trajectories.\n"
        "Task: ${task}\n"
        "\n"
        "Material:\n"
        "${content}\n"
        "\n"
        "Context:\n"
        "${context}\n"
        "\n"
        "Respond with exactly these three sections, each holding zero or more\n"
        '"- " bullet lines:\n'
        "APPROACH:\n"
        "CHECKLIST:\n"
        "PITFALL:\n"
    ),
    LlmRole.VERIFIER: Template(
        "You are a strict reviewer of optimization work.\n"
        "Task: ${task}\n"
        "\n"
        "Subject under review:\n"
        "${content}\n"
        "\n"
        "Reference material:\n"
        "${reference}\n"
        "\n"
        "Reply with exactly one of:\n"
        "MATCH <candidate id>  -- the subject belongs with that candidate\n"
        "NO_MATCH              -- no candidate fits\n"
        "PASS                  -- the subject satisfies every reference item\n"
        "FAIL                  -- followed by the corrected subject in a fenced block\n"
    ),
    LlmRole.SYNTHESIZER: Template(
        "You consolidate batches of instance-level insights into the cluster's\n"
        "generalized knowledge. Merge into robust, de-duplicated guidance and\n"
        "keep every specific pitfall warning.\n"
        "\n"
        "Current knowledge:\n"
        "${current}\n"
        "\n"
        "New batch:\n"
        "${batch}\n"
        "\n"
        "Respond with the three sections:\n"
        "APPROACH:\n"
        "CHECKLIST:\n"
        "PITFALL:\n"
    ),
    LlmRole.SELECTOR: Template(
        "You rank candidate solution paths for a new optimization problem by\n"
        "how well each path's strategy fits the problem.\n"
        "\n"
        "Problem:\n"
        "${problem}\n"
        "\n"
        "Candidate paths:\n"
        "${paths}\n"
        "\n"
        "Reply with one line:\n"
        "RANK: <comma-separated path indices, best first>\n"
    ),
    LlmRole.GENERATOR: Template(
        "You produce one component of an optimization solution.\n"
        "Task: ${task}\n"
        "Attempt: ${attempt}\n"
        "\n"
        "Input:\n"
        "${input}\n"
        "\n"
        "Guidance:\n"
        "${guidance}\n"
        "\n"
        "Respond with exactly one fenced block (```model or ```python)\n"
        "containing only the requested component. Solver scripts must use only\n"
        "the allowed libraries (Gurobi, PuLP, OR-Tools, SciPy, NetworkX) and\n"
        "must print the structured answer block:\n"
        "===ANSWER_BEGIN===\n"
        "objective=<number>\n"
        "<requirement name>=<number>   (one line per named requirement)\n"
        "===ANSWER_END===\n"
    ),
    LlmRole.FIXER: Template(
        "You repair a failed optimization solver script.\n"
        "\n"
        "Execution error:\n"
        "${error}\n"
        "\n"
        "Known pitfalls for this strategy:\n"
        "${pitfalls}\n"
        "\n"
        "Checklist:\n"
        "${checklist}\n"
        "\n"
        "Current script:\n"
        "```python\n"
        "${code}\n"
        "```\n"
        "\n"
        "Respond with the corrected script in one ```python fenced block,\n"
        "keeping the structured answer block output.\n"
    ),
}

REQUIRED_SLOTS: dict[LlmRole, frozenset[str]] = {
    LlmRole.EXTRACTOR: frozenset({"task", "content", "context"}),
    LlmRole.VERIFIER: frozenset({"task", "content", "reference"}),
    LlmRole.SYNTHESIZER: frozenset({"current", "batch"}),
    LlmRole.SELECTOR: frozenset({"problem", "paths"}),
    LlmRole.GENERATOR: frozenset({"task", "attempt", "input", "guidance"}),
    LlmRole.FIXER: frozenset({"error", "pitfalls", "checklist", "code"}),
}


def render_prompt(role: LlmRole, slots: Mapping[str, str]) -> str:
    missing = REQUIRED_SLOTS[role] - set(slots)
    if missing:
        raise PromptError(f"{role.value} prompt missing slots: {sorted(missing)}")
    return _TEMPLATES[role].substitute(slots)


def format_items(items: Iterable[str]) -> str:
    """Bullet-list rendering used wherever knowledge items enter a prompt."""
    lines = [f"- {item}" for item in items]
    return "\n".join(lines) if lines else "(none)"


def format_knowledge(k: Knowledge) -> str:
    """Three-section rendering of a knowledge value, parseable back."""
    return (
        "APPROACH:\n" + _section_lines(k.approach)
        + "CHECKLIST:\n" + _section_lines(k.checklist)
        + "PITFALL:\n" + _section_lines(k.pitfall)
    )


def _section_lines(items: tuple[str, ...]) -> str:
    return "".join(f"- {item}\n" for item in items)
