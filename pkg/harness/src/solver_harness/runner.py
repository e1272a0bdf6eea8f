"""Run one generated solver script and map the outcome to an exit code.

The script executes inside this process (one harness process per
execution) under an alarm-based wall clock and a runtime import gate that
admits only the allowed solver libraries plus the standard library. Script
stdout is relayed verbatim; the harness writes its own messages to stderr
only, so it never adds lines inside the sentinel answer block.

Exit codes (the invocation contract):
    0  script finished and printed a well-formed answer block
    2  script error: syntax error, uncaught exception, nonzero sys.exit,
       or an import outside the allow-list
    3  wall-clock timeout
    4  script finished but printed no valid answer block
"""

from __future__ import annotations

import argparse
import importlib.abc
import io
import math
import signal
import sys
import traceback
from contextlib import redirect_stdout
from pathlib import Path
from typing import Optional

EXIT_SUCCESS = 0
EXIT_SCRIPT_ERROR = 2
EXIT_TIMEOUT = 3
EXIT_NON_NUMERIC = 4

ANSWER_BEGIN = "===ANSWER_BEGIN==="
ANSWER_END = "===ANSWER_END==="

# The allowed solver libraries, plus runtime dependencies they pull in.
ALLOWED_LIBRARIES = frozenset({"gurobipy", "networkx", "ortools", "pulp", "scipy"})
LIBRARY_DEPENDENCIES = frozenset({"numpy", "google"})  # scipy -> numpy, ortools -> protobuf


class ScriptTimeout(BaseException):
    """Raised by the alarm handler; BaseException so scripts can't swallow it."""


class _ImportGate(importlib.abc.MetaPathFinder):
    """Meta-path finder that rejects imports outside the allow-list."""

    def __init__(self) -> None:
        self.allowed = set(ALLOWED_LIBRARIES) | set(LIBRARY_DEPENDENCIES) \
            | set(sys.stdlib_module_names)

    def find_spec(self, fullname, path=None, target=None):
        top = fullname.split(".")[0]
        # _sysconfigdata_* is a per-build stdlib artifact that never appears
        # in sys.stdlib_module_names.
        if top not in self.allowed and not top.startswith("_sysconfigdata"):
            raise ImportError(
                f"import of {top!r} is not allowed; permitted libraries: "
                + ", ".join(sorted(ALLOWED_LIBRARIES)))
        return None  # defer to the normal finders


class _Tee(io.TextIOBase):
    """Relay writes to the real stdout while keeping a copy for validation."""

    def __init__(self, downstream, capture: io.StringIO) -> None:
        self.downstream = downstream
        self.capture = capture

    def write(self, text: str) -> int:
        self.capture.write(text)
        return self.downstream.write(text)

    def flush(self) -> None:
        self.downstream.flush()


def validate_answer_block(stdout_text: str) -> bool:
    """True iff the last complete sentinel block carries a numeric objective
    and only numeric key=value lines."""
    blocks: list[str] = []
    current: Optional[list[str]] = None
    for line in stdout_text.splitlines():
        if line.strip() == ANSWER_BEGIN:
            current = []
        elif line.strip() == ANSWER_END:
            if current is not None:
                blocks.append("\n".join(current))
            current = None
        elif current is not None:
            current.append(line)
    for body in reversed(blocks):
        objective_seen = False
        valid = True
        for line in body.splitlines():
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
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
            if key.strip() == "objective":
                objective_seen = True
        if valid and objective_seen:
            return True
    return False


def run_script(script_path: str, timeout: float) -> int:
    try:
        source = Path(script_path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"harness: cannot read script: {exc}", file=sys.stderr)
        return EXIT_SCRIPT_ERROR
    try:
        code = compile(source, script_path, "exec")
    except SyntaxError:
        traceback.print_exc(file=sys.stderr)
        return EXIT_SCRIPT_ERROR

    def on_alarm(signum, frame):
        raise ScriptTimeout()

    capture = io.StringIO()
    tee = _Tee(sys.stdout, capture)
    gate = _ImportGate()
    namespace = {"__name__": "__main__", "__file__": script_path}
    previous_handler = signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, max(timeout, 0.01))
    sys.meta_path.insert(0, gate)
    try:
        with redirect_stdout(tee):
            exec(code, namespace)
    except ScriptTimeout:
        print(f"harness: script exceeded {timeout:g}s", file=sys.stderr)
        return EXIT_TIMEOUT
    except SystemExit as exc:
        if exc.code not in (None, 0):
            print(f"harness: script exited with {exc.code!r}", file=sys.stderr)
            return EXIT_SCRIPT_ERROR
    except BaseException:
        traceback.print_exc(file=sys.stderr)
        return EXIT_SCRIPT_ERROR
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, previous_handler)
        if gate in sys.meta_path:
            sys.meta_path.remove(gate)
        sys.stdout.flush()

    if not validate_answer_block(capture.getvalue()):
        print("harness: no valid answer block on stdout", file=sys.stderr)
        return EXIT_NON_NUMERIC
    return EXIT_SUCCESS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="solver-harness",
        description="Execute one solver script under the allowed-library environment",
    )
    parser.add_argument("script", help="path to the script to run")
    parser.add_argument("--timeout", type=float, default=60.0,
                        help="wall-clock limit in seconds")
    args = parser.parse_args(argv)
    return run_script(args.script, args.timeout)


if __name__ == "__main__":
    sys.exit(main())
