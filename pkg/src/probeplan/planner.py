"""Forward breadth-first planning over ground STRIPS actions.

Two searches live here. ``search_plan`` is the pessimistic planner: only atoms
known to be true exist. ``search_optimistic`` lets the planner assume unknown
atoms have whatever value it needs, and returns the plan that needs the
fewest such assumptions (then the shortest).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping, Sequence

from .symbolic import (
    Domain,
    GroundAction,
    GroundAtom,
    ObservationStore,
    SkillCall,
    Tri,
    ground,
)


class SearchLimitExceeded(Exception):
    """The search hit a resource limit before proving anything."""


@dataclass(frozen=True)
class SearchLimits:
    max_expanded: int = 200_000
    max_depth: int = 40


@dataclass(frozen=True)
class SymbolicState:
    true_atoms: frozenset[GroundAtom] = frozenset()


@dataclass(frozen=True)
class Plan:
    steps: tuple[GroundAction, ...] = ()

    @property
    def cost(self) -> int:
        return len(self.steps)

    def __len__(self):
        return len(self.steps)

    def calls(self) -> list[SkillCall]:
        return [SkillCall(a.name, a.args) for a in self.steps]


@dataclass(frozen=True)
class OptimisticPlan:
    steps: tuple[GroundAction, ...]
    assumptions: tuple[tuple[GroundAtom, bool], ...]

    def calls(self) -> list[SkillCall]:
        return [SkillCall(a.name, a.args) for a in self.steps]


@dataclass(frozen=True)
class LogicVerdict:
    lc: int
    missing: tuple[tuple[GroundAtom, Tri], ...] = ()
    failing_index: int | None = None

    def __post_init__(self):
        if self.lc not in (0, 1):
            raise ValueError("lc must be 0 or 1")
        if (self.lc == 1) != (not self.missing):
            raise ValueError("lc = 1 exactly when nothing is missing")
        if self.lc == 1 and self.failing_index is not None:
            raise ValueError("a passing verdict has no failing index")

    def to_json(self) -> dict:
        return {
            "lc": self.lc,
            "missing": [[str(a), v.value] for a, v in self.missing],
            "failing_index": self.failing_index,
        }


# ---------------------------------------------------------------------------

def ground_all(
    domain: Domain, objects: Mapping[str, str], skills: Iterable[str] | None = None
) -> list[GroundAction]:
    """All well-typed ground actions, sorted by (name, args)."""
    names = sorted(domain.skills) if skills is None else sorted(skills)
    out = []
    for name in names:
        schema = domain.skills[name]
        pools = [domain.objects_of_type(objects, t) for _, t in schema.params]
        for args in product(*pools):
            out.append(ground(schema, dict(zip(schema.param_names, args)), objects, domain))
    out.sort(key=lambda a: a.key)
    return out


def _atoms(state) -> frozenset[GroundAtom]:
    if isinstance(state, SymbolicState):
        return state.true_atoms
    return frozenset(state)


def applicable(state, action: GroundAction) -> tuple[bool, list[GroundAtom], list[GroundAtom]]:
    """(ok, missing positive preconditions, negated preconditions that hold)."""
    atoms = _atoms(state)
    missing = sorted(action.pre_pos - atoms)
    blocking = sorted(action.pre_neg & atoms)
    return (not missing and not blocking), missing, blocking


def progress(state, action: GroundAction) -> frozenset[GroundAtom]:
    return (_atoms(state) - action.delete) | action.add


def _reconstruct(parent, node) -> tuple[GroundAction, ...]:
    steps = []
    while parent[node] is not None:
        node, action = parent[node]
        steps.append(action)
    return tuple(reversed(steps))


def search_plan(
    domain: Domain | None,
    init,
    goal: Iterable[GroundAtom],
    must_include: SkillCall | None = None,
    limits: SearchLimits | None = None,
    objects: Mapping[str, str] | None = None,
    actions: Sequence[GroundAction] | None = None,
) -> Plan | None:
    """Shortest plan from ``init`` to a superset of ``goal``.

    Returns None when the reachable space is exhausted without success and
    raises SearchLimitExceeded when a limit cut the search short.
    """
    limits = limits or SearchLimits()
    if actions is None:
        if domain is None or objects is None:
            raise ValueError("either actions or domain and objects are required")
        actions = ground_all(domain, objects)
    init = _atoms(init)
    goal = frozenset(goal)
    target = must_include.key if must_include is not None else None
    start = (init, target is None)
    if start[1] and goal <= init:
        return Plan(())
    parent = {start: None}
    frontier = deque([(start, 0)])
    expanded = 0
    truncated = False
    while frontier:
        node, depth = frontier.popleft()
        if depth >= limits.max_depth:
            truncated = True
            continue
        expanded += 1
        if expanded > limits.max_expanded:
            raise SearchLimitExceeded(f"expanded more than {limits.max_expanded} states")
        state, included = node
        for a in actions:
            if not a.pre_pos <= state or a.pre_neg & state:
                continue
            child = ((state - a.delete) | a.add, included or a.key == target)
            if child in parent:
                continue
            parent[child] = (node, a)
            if child[1] and goal <= child[0]:
                return Plan(_reconstruct(parent, child))
            frontier.append((child, depth + 1))
    if truncated:
        raise SearchLimitExceeded(f"depth limit {limits.max_depth} reached")
    return None


def search_optimistic(
    known_true: Iterable[GroundAtom],
    unknown: Iterable[GroundAtom],
    goal: Iterable[GroundAtom],
    actions: Sequence[GroundAction],
    must_include: SkillCall | None = None,
    limits: SearchLimits | None = None,
) -> OptimisticPlan | None:
    """Plan that may assume values for ``unknown`` atoms, fewest assumptions first.

    An unknown atom is assumed at its first use by a precondition and is
    settled from then on; an effect on it settles it as well. Goal atoms are
    never assumed.
    """
    limits = limits or SearchLimits()
    goal = frozenset(goal)
    target = must_include.key if must_include is not None else None
    start = (frozenset(known_true), frozenset(unknown) - goal, target is None)
    counter = 0
    heap = [(0, 0, counter, start)]
    best = {start: (0, 0)}
    parent: dict = {start: None}
    closed = set()
    expanded = 0
    truncated = False
    while heap:
        cost, depth, _, node = heapq.heappop(heap)
        if node in closed:
            continue
        closed.add(node)
        true, pending, included = node
        if included and goal <= true:
            steps, assumed = [], []
            cur = node
            while parent[cur] is not None:
                cur, a, made = parent[cur]
                steps.append(a)
                assumed.append(made)
            assumptions = tuple(x for made in reversed(assumed) for x in made)
            return OptimisticPlan(tuple(reversed(steps)), assumptions)
        if depth >= limits.max_depth:
            truncated = True
            continue
        expanded += 1
        if expanded > limits.max_expanded:
            raise SearchLimitExceeded(f"expanded more than {limits.max_expanded} states")
        for a in actions:
            made = []
            ok = True
            for p in sorted(a.pre_pos):
                if p in true:
                    continue
                if p in pending:
                    made.append((p, True))
                    continue
                ok = False
                break
            if not ok:
                continue
            for p in sorted(a.pre_neg):
                if p in true:
                    ok = False
                    break
                if p in pending:
                    made.append((p, False))
            if not ok:
                continue
            new_true = true | {p for p, v in made if v}
            new_true = (new_true - a.delete) | a.add
            new_pending = pending - {p for p, _ in made} - a.delete - a.add
            child = (new_true, new_pending, included or a.key == target)
            key = (cost + len(made), depth + 1)
            if child in closed or best.get(child, (1 << 30, 0)) <= key:
                continue
            best[child] = key
            parent[child] = (node, a, tuple(made))
            counter += 1
            heapq.heappush(heap, (key[0], key[1], counter, child))
    if truncated:
        raise SearchLimitExceeded(f"depth limit {limits.max_depth} reached")
    return None


def unknown_atoms(
    domain: Domain, objects: Mapping[str, str], obs: ObservationStore
) -> frozenset[GroundAtom]:
    return frozenset(a for a in domain.atom_universe(objects) if a not in obs)


def _label(obs: ObservationStore, atom: GroundAtom, projected_false: bool) -> Tri:
    v = obs.lookup(atom)
    if v is Tri.TRUE and projected_false:
        return Tri.FALSE
    return v


MAX_ALTERNATIVES = 4


def logic_confidence(
    domain: Domain,
    obs: ObservationStore,
    goal: Iterable[GroundAtom],
    prefix: Sequence[SkillCall],
    f_n: SkillCall,
    objects: Mapping[str, str],
    actions: Sequence[GroundAction] | None = None,
    limits: SearchLimits | None = None,
) -> LogicVerdict:
    """Binary symbolic feasibility of ``f_n`` after ``prefix`` under known-true atoms."""
    goal = frozenset(goal)
    if actions is None:
        actions = ground_all(domain, objects)
    by_key = {a.key: a for a in actions}
    init = obs.true_atoms()
    state = init
    calls = list(prefix) + [f_n]
    for i, call in enumerate(calls):
        action = by_key.get(call.key)
        if action is None:
            # raises GroundingError: only verified policies reach validation
            action = domain.ground_call(call.name, call.args, objects)
        ok, missing, blocking = applicable(state, action)
        if not ok:
            labeled = [(m, _label(obs, m, True)) for m in missing]
            labeled += [(b, Tri.TRUE) for b in blocking]
            return LogicVerdict(0, tuple(labeled), i)
        state = progress(state, action)

    n = len(prefix)
    try:
        plan = search_plan(domain, init, goal, must_include=f_n, limits=limits, actions=actions)
    except SearchLimitExceeded:
        plan = None
    if plan is not None:
        return LogicVerdict(1)

    # Collect the guesses of several alternative optimistic plans: each round
    # bans the atoms assumed so far, so one probe can settle all alternatives.
    missing: list[tuple[GroundAtom, Tri]] = []
    pool = set(unknown_atoms(domain, objects, obs))
    seen: set[GroundAtom] = set()
    for _ in range(MAX_ALTERNATIVES):
        try:
            opt = search_optimistic(init, pool, goal, actions, must_include=f_n, limits=limits)
        except SearchLimitExceeded:
            opt = None
        if opt is None or not opt.assumptions:
            break
        for atom, _ in opt.assumptions:
            if atom not in seen:
                seen.add(atom)
                missing.append((atom, Tri.UNKNOWN))
        pool -= seen
    if not missing:
        missing = [(g, obs.lookup(g)) for g in sorted(goal) if g not in init]
    if not missing:
        if not goal:
            raise ValueError("logic confidence needs a nonempty goal")
        missing = [(g, obs.lookup(g)) for g in sorted(goal)]
    return LogicVerdict(0, tuple(missing), n)


__all__ = [
    "LogicVerdict", "OptimisticPlan", "Plan", "SearchLimitExceeded", "SearchLimits",
    "SymbolicState", "applicable", "ground_all", "logic_confidence", "progress",
    "search_optimistic", "search_plan", "unknown_atoms",
]
