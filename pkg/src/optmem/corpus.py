"""Problem corpora: the line-delimited record format, brute-force optimum
oracles, and the seeded synthetic generator.

Every harness in the repo runs on generated corpora, so no external data is
required. Generated texts carry a ``[[mock ...]]`` directive that steers the
offline backend; live backends simply see it as part of the problem prose.
"""

from __future__ import annotations

import itertools
import json
import random
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .domain import GroundTruth, Problem
from .providers import MockMarker


class CorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Record format: one JSON object per line
#   {"id","text","source","objective","requirements"}
# objective null => unlabeled problem
# ---------------------------------------------------------------------------

def problem_to_record(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "text": problem.text,
        "source": problem.source,
        "objective": problem.ground_truth.objective if problem.ground_truth else None,
        "requirements": dict(problem.ground_truth.requirements) if problem.ground_truth else {},
    }


def problem_from_record(record: dict) -> Problem:
    try:
        objective = record.get("objective")
        ground_truth = None
        if objective is not None:
            ground_truth = GroundTruth(
                objective=float(objective),
                requirements={str(k): float(v) for k, v in record.get("requirements", {}).items()},
            )
        return Problem(
            id=str(record["id"]),
            text=str(record["text"]),
            ground_truth=ground_truth,
            source=str(record.get("source", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"bad problem record: {exc}") from exc


def save_problems(problems: Sequence[Problem], path: str | Path) -> None:
    lines = [json.dumps(problem_to_record(p), ensure_ascii=False) for p in problems]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_problems(path: str | Path) -> list[Problem]:
    problems: list[Problem] = []
    seen: set[str] = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: not a JSON record: {exc}") from exc
        problem = problem_from_record(record)
        if problem.id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate problem id {problem.id!r}")
        seen.add(problem.id)
        problems.append(problem)
    return problems


# ---------------------------------------------------------------------------
# Brute-force optimum oracles
# ---------------------------------------------------------------------------

def knapsack_optimum(values: Sequence[float], weights: Sequence[float],
                     capacity: float) -> tuple[float, tuple[int, ...]]:
    """Exhaustive 0/1 knapsack. Returns (best value, canonical best subset)."""
    if len(values) != len(weights):
        raise ValueError("values and weights must align")
    if len(values) > 20:
        raise ValueError("oracle is exponential; keep instances small")
    best_value, best_subset = float("-inf"), ()
    for mask in range(1 << len(values)):
        chosen = tuple(i for i in range(len(values)) if mask & (1 << i))
        weight = sum(weights[i] for i in chosen)
        if weight > capacity:
            continue
        value = sum(values[i] for i in chosen)
        if value > best_value:
            best_value, best_subset = value, chosen
    return best_value, best_subset


def assignment_optimum(cost: Sequence[Sequence[float]]) -> tuple[float, tuple[int, ...]]:
    """Exhaustive linear assignment. Returns (min cost, task per worker)."""
    n = len(cost)
    if any(len(row) != n for row in cost):
        raise ValueError("cost matrix must be square")
    if n > 8:
        raise ValueError("oracle is factorial; keep instances small")
    best_cost, best_perm = float("inf"), tuple(range(n))
    for perm in itertools.permutations(range(n)):
        total = sum(cost[w][perm[w]] for w in range(n))
        if total < best_cost:
            best_cost, best_perm = total, perm
    return best_cost, best_perm


def lp2_optimum(c1: float, c2: float,
                constraints: Sequence[tuple[float, float, float]]) -> tuple[float, float, float, bool]:
    """Maximize c1*x + c2*y over {a*x + b*y <= r} constraints with x, y >= 0,
    by vertex enumeration. Returns (objective, x, y, unique_vertex)."""
    candidates: list[tuple[float, float]] = [(0.0, 0.0)]
    full = list(constraints) + [(-1.0, 0.0, 0.0), (0.0, -1.0, 0.0)]  # -x<=0, -y<=0
    for (a1, b1, r1), (a2, b2, r2) in itertools.combinations(full, 2):
        det = a1 * b2 - a2 * b1
        if abs(det) < 1e-12:
            continue
        x = (r1 * b2 - r2 * b1) / det
        y = (a1 * r2 - a2 * r1) / det
        candidates.append((x, y))
    feasible = [
        (x, y) for x, y in candidates
        if x >= -1e-9 and y >= -1e-9
        and all(a * x + b * y <= r + 1e-9 for a, b, r in constraints)
    ]
    if not feasible:
        raise ValueError("LP instance is infeasible")
    scored = sorted(((c1 * x + c2 * y, x, y) for x, y in feasible), reverse=True)
    best = scored[0]
    unique = len(scored) < 2 or best[0] - scored[1][0] > 1e-9
    return best[0], max(best[1], 0.0), max(best[2], 0.0), unique


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

FAMILIES = ("knapsack", "assignment", "production")

# Outcome mix for construction corpora: mostly always-correct, some
# recovered-on-retry, some persistent failures.
_DEFAULT_MIX = (("ok", 0.55), ("ok@2", 0.25), ("err", 0.20))


def _pick_mix(rng: random.Random) -> str:
    roll = rng.random()
    acc = 0.0
    for spec, share in _DEFAULT_MIX:
        acc += share
        if roll < acc:
            return spec
    return _DEFAULT_MIX[-1][0]


def _knapsack_problem(rng: random.Random, pid: str, bare: str, guided: str,
                      source: str) -> Problem:
    n = rng.randint(4, 6)
    values = [float(rng.randint(5, 40)) for _ in range(n)]
    weights = [float(rng.randint(1, 9)) for _ in range(n)]
    capacity = float(rng.randint(8, 16))
    optimum, chosen = knapsack_optimum(values, weights, capacity)
    marker = MockMarker(family="knapsack", bare=bare, guided=guided, objective=optimum)
    text = (
        f"A courier chooses which of {n} parcels to load into a knapsack holding "
        f"{capacity:g} kg. Parcel weights are {[f'{w:g}' for w in weights]} kg and values are "
        f"{[f'{v:g}' for v in values]}. Select parcels to maximize total value without "
        f"exceeding the weight capacity. {marker.render()}"
    )
    return Problem(id=pid, text=text, ground_truth=GroundTruth(objective=optimum), source=source)


def _assignment_problem(rng: random.Random, pid: str, bare: str, guided: str,
                        source: str) -> Problem:
    n = 3
    cost = [[float(rng.randint(2, 20)) for _ in range(n)] for _ in range(n)]
    optimum, _ = assignment_optimum(cost)
    marker = MockMarker(family="assignment", bare=bare, guided=guided, objective=optimum)
    text = (
        f"Assign {n} workers to {n} tasks given the assignment cost matrix {cost}. "
        f"Each worker handles exactly one task and each task gets exactly one worker; "
        f"minimize the total cost. {marker.render()}"
    )
    return Problem(id=pid, text=text, ground_truth=GroundTruth(objective=optimum), source=source)


def _production_problem(rng: random.Random, pid: str, bare: str, guided: str,
                        source: str) -> Problem:
    c1, c2 = float(rng.randint(3, 9)), float(rng.randint(2, 8))
    constraints = [
        (float(rng.randint(1, 4)), float(rng.randint(1, 4)), float(rng.randint(10, 30))),
        (float(rng.randint(1, 4)), float(rng.randint(1, 4)), float(rng.randint(10, 30))),
    ]
    optimum, x, y, unique = lp2_optimum(c1, c2, constraints)
    requirements = {}
    if unique:
        requirements = {"product_x": round(x, 6), "product_y": round(y, 6)}
    marker = MockMarker(
        family="production", bare=bare, guided=guided, objective=optimum,
        requirements=tuple(requirements.items()),
    )
    rows = "; ".join(f"{a:g}x + {b:g}y <= {r:g}" for a, b, r in constraints)
    text = (
        f"A workshop makes two products. Product x earns {c1:g} per unit and product y "
        f"earns {c2:g}. Production limits: {rows}. Quantities are non-negative and may "
        f"be fractional; maximize total profit. {marker.render()}"
    )
    return Problem(id=pid, text=text,
                   ground_truth=GroundTruth(objective=optimum, requirements=requirements),
                   source=source)


_FAMILY_BUILDERS = {
    "knapsack": _knapsack_problem,
    "assignment": _assignment_problem,
    "production": _production_problem,
}


def synthetic_corpus(size: int, seed: int, source: str = "synthetic",
                     families: Sequence[str] = FAMILIES,
                     id_prefix: str = "syn") -> list[Problem]:
    """Deterministic labeled corpus cycling through problem families."""
    if size < 1:
        raise CorpusError("corpus size must be >= 1")
    rng = random.Random(seed)
    problems = []
    for i in range(size):
        family = families[i % len(families)]
        bare = _pick_mix(rng)
        problems.append(_FAMILY_BUILDERS[family](
            rng, f"{id_prefix}-{i:04d}", bare, "ok", source))
    return problems


# ---------------------------------------------------------------------------
# Scripted scenario fixtures
# ---------------------------------------------------------------------------

def scenario_build_corpus(seed: int = 101) -> list[Problem]:
    """18 problems, 6 per family, ingestion-ordered so each cluster pair sees
    a recovered and a failed trajectory before its first knowledge synthesis.
    """
    rng = random.Random(seed)
    specs = ["ok", "ok@2", "ok", "ok", "err", "ok"]
    problems = []
    for family in FAMILIES:
        for j, bare in enumerate(specs):
            problems.append(_FAMILY_BUILDERS[family](
                rng, f"scb-{family}-{j:02d}", bare, "ok", "scenario-build"))
    # Interleave families to mirror a mixed corpus while keeping per-family order.
    interleaved = []
    per_family = [problems[i * len(specs):(i + 1) * len(specs)] for i in range(len(FAMILIES))]
    for j in range(len(specs)):
        for fam_list in per_family:
            interleaved.append(fam_list[j])
    return interleaved


def scenario_eval_problems(seed: int = 202) -> list[Problem]:
    """The scripted 10-problem benchmark: 4 solvable bare, 3 solvable only
    with guidance, 3 unsolvable either way."""
    rng = random.Random(seed)
    specs = (
        [("ok", "ok")] * 4
        + [("err", "ok")] * 3
        + [("err", "err")] * 3
    )
    problems = []
    for i, (bare, guided) in enumerate(specs):
        problems.append(_knapsack_problem(
            rng, f"sce-{i:02d}", bare, guided, "scenario-eval"))
    return problems


def single_cluster_corpus(count: int, seed: int = 303,
                          family: str = "knapsack") -> list[Problem]:
    """All-correct same-family corpus; every node lands in one cluster pair."""
    rng = random.Random(seed)
    return [
        _FAMILY_BUILDERS[family](rng, f"uni-{i:03d}", "ok", "ok", "single-cluster")
        for i in range(count)
    ]
