"""Isolated execution of generated solver scripts and answer judging.

Real execution happens through the external runner process (see the harness
package); every run gets a fresh temporary working directory, a wall-clock
kill, and output capture. Scripts communicate results through one structured
answer block on stdout:

    ===ANSWER_BEGIN===
    objective=<number>
    <requirement name>=<number>      (zero or more lines)
    ===ANSWER_END===

The stub executor decodes ``# STUB:`` directives instead of spawning
anything, so the entire framework test suite runs without the runner
installed.
"""

from __future__ import annotations

import math
import re
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .domain import ExecutionResult, ExecutionStatus, ExtractedAnswer, GroundTruth

ANSWER_BEGIN = "===ANSWER_BEGIN==="
ANSWER_END = "===ANSWER_END==="

DEFAULT_ALLOWED_LIBRARIES = ("gurobipy", "networkx", "ortools", "pulp", "scipy")

# Exit codes of the runner process, part of its invocation contract.
EXIT_SUCCESS = 0
EXIT_SCRIPT_ERROR = 2
EXIT_TIMEOUT = 3
EXIT_NON_NUMERIC = 4

TIMEOUT_GRACE_SECONDS = 1.0
ABS_TOLERANCE_FLOOR = 1e-6


class HarnessMissingError(RuntimeError):
    """The external runner is not installed or not where configured."""


@dataclass(frozen=True)
class SandboxPolicy:
    timeout_seconds: float = 60.0
    max_output_bytes: int = 65536
    network_access: bool = False
    allowed_libraries: tuple[str, ...] = DEFAULT_ALLOWED_LIBRARIES

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ValueError("timeout must be positive")
        if self.max_output_bytes < 1:
            raise ValueError("max_output_bytes must be positive")


# ---------------------------------------------------------------------------
# Answer block
# ---------------------------------------------------------------------------

def format_answer_block(answer: ExtractedAnswer) -> str:
    lines = [ANSWER_BEGIN, f"objective={answer.objective!r}"]
    lines += [f"{name}={value!r}" for name, value in answer.requirements.items()]
    lines.append(ANSWER_END)
    return "\n".join(lines) + "\n"


def parse_answer_block(stdout: str) -> Optional[ExtractedAnswer]:
    """Parse the last complete answer block in a stdout stream.

    Solver libraries are chatty, so everything outside the sentinels is
    ignored. Returns None when no well-formed block with a numeric
    objective exists.
    """
    blocks = re.findall(
        re.escape(ANSWER_BEGIN) + r"\n(.*?)" + re.escape(ANSWER_END),
        stdout,
        re.DOTALL,
    )
    for body in reversed(blocks):
        objective: Optional[float] = None
        requirements: dict[str, float] = {}
        valid = True
        for line in body.splitlines():
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                valid = False
                break
            try:
                number = float(value.strip())
            except ValueError:
                valid = False
                break
            if not math.isfinite(number):
                valid = False
                break
            if key == "objective":
                objective = number
            else:
                requirements[key] = number
        if valid and objective is not None:
            return ExtractedAnswer(objective=objective, requirements=requirements)
    return None


# ---------------------------------------------------------------------------
# Lexical import gate
# ---------------------------------------------------------------------------

_IMPORT_RE = re.compile(r"^[ \t]*import[ \t]+([A-Za-z0-9_. \t,]+)", re.MULTILINE)
_FROM_RE = re.compile(r"^\s*from\s+([A-Za-z0-9_.]+)\s+import", re.MULTILINE)


def scan_disallowed_imports(script_text: str, policy: SandboxPolicy) -> list[str]:
    """Top-level imported packages outside the allow-list and the stdlib."""
    allowed = set(policy.allowed_libraries) | set(sys.stdlib_module_names)
    found: set[str] = set()
    for match in _IMPORT_RE.finditer(script_text):
        for part in match.group(1).split(","):
            name = part.strip().split(" as ")[0].strip()
            if name:
                found.add(name.split(".")[0])
    for match in _FROM_RE.finditer(script_text):
        found.add(match.group(1).split(".")[0])
    return sorted(found - allowed)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def execute(script_text: str, policy: SandboxPolicy,
            harness_cmd: Sequence[str]) -> ExecutionResult:
    """Run a solver script through the external runner in a fresh temp dir."""
    if not script_text.strip():
        raise ValueError("refusing to execute an empty script")
    if not harness_cmd:
        raise HarnessMissingError("no runner command configured")

    violations = scan_disallowed_imports(script_text, policy)
    if violations:
        return ExecutionResult(
            status=ExecutionStatus.RUNTIME_ERROR,
            stderr="disallowed imports: " + ", ".join(violations),
        )

    timeout = policy.timeout_seconds
    with tempfile.TemporaryDirectory(prefix="optmem-run-") as workdir:
        script_path = Path(workdir) / "script.py"
        script_path.write_text(script_text, encoding="utf-8")
        cmd = [*harness_cmd, str(script_path), "--timeout", f"{timeout:g}"]
        started = time.monotonic()
        try:
            proc = subprocess.run(
                cmd,
                cwd=workdir,
                capture_output=True,
                text=True,
                timeout=timeout + TIMEOUT_GRACE_SECONDS * 0.8,
                env=_run_env(policy),
            )
        except FileNotFoundError as exc:
            raise HarnessMissingError(f"runner not found: {cmd[0]!r}") from exc
        except subprocess.TimeoutExpired as exc:
            wall = time.monotonic() - started
            return ExecutionResult(
                status=ExecutionStatus.TIMEOUT,
                stdout=_truncate(_decode(exc.stdout), policy),
                stderr=_truncate(_decode(exc.stderr), policy),
                wall_time=wall,
            )
        wall = time.monotonic() - started

    stdout, stderr = proc.stdout or "", proc.stderr or ""
    status = _status_for_exit(proc.returncode)
    extracted = parse_answer_block(stdout) if status is ExecutionStatus.SUCCESS else None
    if status is ExecutionStatus.SUCCESS and extracted is None:
        # Runner contract says exit 0 implies a valid block; stay defensive.
        status = ExecutionStatus.NON_NUMERIC_OUTPUT
    if status is not ExecutionStatus.SUCCESS and proc.returncode not in (
            EXIT_SCRIPT_ERROR, EXIT_TIMEOUT, EXIT_NON_NUMERIC, EXIT_SUCCESS):
        stderr = f"[runner exited with unexpected code {proc.returncode}]\n" + stderr
    return ExecutionResult(
        status=status,
        stdout=_truncate(stdout, policy),
        stderr=_truncate(stderr, policy),
        extracted=extracted,
        wall_time=wall,
    )


def _run_env(policy: SandboxPolicy) -> dict[str, str]:
    import os

    env = dict(os.environ)
    if not policy.network_access:
        env["OPTMEM_NO_NETWORK"] = "1"
    return env


def _decode(raw) -> str:
    if raw is None:
        return ""
    if isinstance(raw, bytes):
        return raw.decode("utf-8", errors="replace")
    return raw


def _status_for_exit(code: int) -> ExecutionStatus:
    if code == EXIT_SUCCESS:
        return ExecutionStatus.SUCCESS
    if code == EXIT_TIMEOUT:
        return ExecutionStatus.TIMEOUT
    if code == EXIT_NON_NUMERIC:
        return ExecutionStatus.NON_NUMERIC_OUTPUT
    return ExecutionStatus.RUNTIME_ERROR


def _truncate(text: str, policy: SandboxPolicy) -> str:
    data = text.encode("utf-8")
    if len(data) <= policy.max_output_bytes:
        return text
    clipped = data[: policy.max_output_bytes].decode("utf-8", errors="ignore")
    return clipped + "\n...[output truncated]"


# ---------------------------------------------------------------------------
# Stub execution
# ---------------------------------------------------------------------------

_STUB_RE = re.compile(r"^#\s*STUB:\s*(.+)$", re.MULTILINE)


def stub_execute(script_text: str) -> ExecutionResult:
    """Decode a ``# STUB: ...`` directive into an ExecutionResult.

    Directives:
        # STUB: success objective=<v> [<name>=<v> ...]
        # STUB: runtime_error [message]
        # STUB: timeout
        # STUB: non_numeric_output
    """
    match = _STUB_RE.search(script_text)
    if not match:
        return ExecutionResult(
            status=ExecutionStatus.RUNTIME_ERROR,
            stderr="stub executor: script carries no '# STUB:' directive",
        )
    directive = match.group(1).strip()
    head, _, rest = directive.partition(" ")
    if head == "success":
        objective: Optional[float] = None
        requirements: dict[str, float] = {}
        for token in rest.split():
            key, sep, value = token.partition("=")
            if not sep:
                continue
            if key == "objective":
                objective = float(value)
            else:
                requirements[key] = float(value)
        if objective is None:
            return ExecutionResult(
                status=ExecutionStatus.RUNTIME_ERROR,
                stderr="stub executor: success directive without objective",
            )
        answer = ExtractedAnswer(objective=objective, requirements=requirements)
        return ExecutionResult(
            status=ExecutionStatus.SUCCESS,
            stdout=format_answer_block(answer),
            extracted=answer,
        )
    if head == "runtime_error":
        return ExecutionResult(
            status=ExecutionStatus.RUNTIME_ERROR,
            stderr=rest or "stubbed runtime error",
        )
    if head == "timeout":
        return ExecutionResult(status=ExecutionStatus.TIMEOUT)
    if head == "non_numeric_output":
        return ExecutionResult(
            status=ExecutionStatus.NON_NUMERIC_OUTPUT,
            stdout="stubbed non-numeric output",
        )
    return ExecutionResult(
        status=ExecutionStatus.RUNTIME_ERROR,
        stderr=f"stub executor: unknown directive {directive!r}",
    )


# ---------------------------------------------------------------------------
# Judging
# ---------------------------------------------------------------------------

def numbers_match(candidate: float, truth: float, rel_tolerance: float) -> bool:
    # Symmetric: relative tolerance applies to the larger magnitude, with an
    # absolute floor near zero.
    return math.isclose(candidate, truth, rel_tol=rel_tolerance,
                        abs_tol=ABS_TOLERANCE_FLOOR)


def judge(extracted: ExtractedAnswer, ground_truth: GroundTruth,
          rel_tolerance: float) -> bool:
    """True iff the objective and every named requirement match the truth.

    A requirement named by the ground truth but absent from the extraction
    fails the judgment; extra extracted names are ignored.
    """
    if rel_tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if not numbers_match(extracted.objective, ground_truth.objective, rel_tolerance):
        return False
    for name, truth_value in ground_truth.requirements.items():
        if name not in extracted.requirements:
            return False
        if not numbers_match(extracted.requirements[name], truth_value, rel_tolerance):
            return False
    return True


# ---------------------------------------------------------------------------
# Executor objects handed to the inference engine
# ---------------------------------------------------------------------------

@dataclass
class StubExecutor:
    """Executes nothing; decodes stub directives. Used by all mock tests."""

    runs: int = 0

    def run(self, script_text: str) -> ExecutionResult:
        self.runs += 1
        return stub_execute(script_text)


@dataclass
class SandboxExecutor:
    """Runs scripts through the external runner under a policy."""

    policy: SandboxPolicy
    harness_cmd: Sequence[str]
    runs: int = field(default=0)

    def run(self, script_text: str) -> ExecutionResult:
        self.runs += 1
        return execute(script_text, self.policy, self.harness_cmd)
