"""Policy and spec generation behind a backend interface.

The oracle backend plans with the symbolic planner. It only trusts atoms
observed true; when that is not enough it falls back to the plan needing the
fewest guesses about unknown atoms and flags the result as best effort, which
is what lets validation and probing do their job downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Protocol, Sequence

from .planner import (
    SearchLimitExceeded,
    SearchLimits,
    ground_all,
    search_optimistic,
    search_plan,
    unknown_atoms,
)
from .probe import ProbeGoal, marker, probe_action_space
from .symbolic import (
    Domain,
    GroundAction,
    GroundAtom,
    GroundingError,
    ObservationStore,
    Origin,
    PolicyCode,
    SkillCall,
    renumber,
)
from .verifier import SafetyRule, TaskSpec, VerificationFeedback, build_spec


class GenerationError(Exception):
    pass


@dataclass(frozen=True)
class TaskContext:
    """What the generator is asked to achieve: a goal to reach or atoms to observe."""

    instruction: str
    goal_atoms: frozenset[GroundAtom]
    objects: Mapping[str, str]
    safety_rules: tuple[SafetyRule, ...] = ()
    allowed_skills: frozenset[str] | None = None
    observe_atoms: frozenset[GroundAtom] = frozenset()
    protected_atoms: frozenset[GroundAtom] = frozenset()

    @property
    def is_probe(self) -> bool:
        return bool(self.observe_atoms)


@dataclass(frozen=True)
class GenerationRequest:
    task: TaskContext
    obs: ObservationStore
    domain: Domain
    template: str = "code_generation"
    prior_policy: PolicyCode | None = None
    prior_feedback: VerificationFeedback | None = None
    frozen_index: int = 0
    exploration_knowledge: ProbeGoal | None = None
    limits: SearchLimits = SearchLimits()

    def __post_init__(self):
        if self.prior_policy is None and self.frozen_index != 0:
            raise ValueError("frozen_index must be 0 without a prior policy")
        if self.prior_policy is not None and not 0 <= self.frozen_index <= len(self.prior_policy):
            raise ValueError("frozen_index exceeds the prior policy")


@dataclass(frozen=True)
class GenerationResult:
    spec: TaskSpec
    policy: PolicyCode
    rationale: str | None = None
    best_effort: bool = False


class GeneratorBackend(Protocol):
    def generate(self, req: GenerationRequest) -> GenerationResult:
        ...

    def regenerate_on_feedback(self, req: GenerationRequest) -> GenerationResult:
        ...


def generate(backend: GeneratorBackend, req: GenerationRequest) -> GenerationResult:
    return _checked(req, backend.generate(req))


def regenerate_on_feedback(backend: GeneratorBackend, req: GenerationRequest) -> GenerationResult:
    if req.prior_feedback is None or not req.prior_feedback.violations:
        raise ValueError("regeneration needs verification feedback")
    if req.prior_policy is None:
        raise ValueError("regeneration needs the prior policy")
    return _checked(req, backend.regenerate_on_feedback(req))


def _checked(req: GenerationRequest, res: GenerationResult) -> GenerationResult:
    if req.prior_policy is not None:
        n = req.frozen_index
        if res.policy.keys()[:n] != req.prior_policy.keys()[:n]:
            raise GenerationError("backend changed the frozen prefix")
    return res


def spec_for(task: TaskContext, domain: Domain) -> TaskSpec:
    return build_spec(
        task.goal_atoms, domain, task.safety_rules, task.instruction,
        task.allowed_skills, task.observe_atoms,
    )


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


class OracleBackend:
    """Deterministic planner-backed generator."""

    def action_space(self, req: GenerationRequest) -> list[GroundAction]:
        task = req.task
        if task.is_probe:
            return probe_action_space(req.domain, task.objects, task.protected_atoms)
        return ground_all(req.domain, task.objects, task.allowed_skills)

    def planning_goal(self, req: GenerationRequest) -> frozenset[GroundAtom]:
        task = req.task
        if task.is_probe:
            return frozenset(marker(a) for a in task.observe_atoms if a not in req.obs)
        return task.goal_atoms

    def _advance(self, req, prefix: Sequence[SkillCall]):
        """Known-true atoms and still-unknown atoms after optimistically applying ``prefix``."""
        true = set(req.obs.true_atoms())
        pending = set(unknown_atoms(req.domain, req.task.objects, req.obs))
        for call in prefix:
            try:
                a = req.domain.ground_call(call.name, call.args, req.task.objects)
            except GroundingError:
                continue
            for p in a.pre_pos:
                if p in pending:
                    pending.discard(p)
                    true.add(p)
            pending -= a.pre_neg
            true -= a.delete
            true |= a.add
            pending -= a.delete | a.add
        return frozenset(true), frozenset(pending)

    def plan_suffix(self, req: GenerationRequest, prefix: Sequence[SkillCall]):
        """(calls, best_effort) continuing ``prefix`` towards the goal."""
        actions = self.action_space(req)
        goal = self.planning_goal(req)
        true, pending = self._advance(req, prefix)
        try:
            plan = search_plan(None, true, goal, limits=req.limits, actions=actions)
        except SearchLimitExceeded:
            plan = None
        if plan is not None:
            return plan.calls(), False
        try:
            opt = search_optimistic(true, pending, goal, actions, limits=req.limits)
        except SearchLimitExceeded:
            opt = None
        if opt is not None:
            return opt.calls(), True
        # partial policy: largest reachable subset of the goal
        goal_list = sorted(goal)
        for size in range(len(goal_list) - 1, 0, -1):
            for sub in combinations(goal_list, size):
                try:
                    opt = search_optimistic(true, pending, sub, actions, limits=req.limits)
                except SearchLimitExceeded:
                    opt = None
                if opt is not None:
                    return opt.calls(), True
        return [], True

    def _result(self, req, calls, best_effort, origin, refined_from=None) -> GenerationResult:
        spec = spec_for(req.task, req.domain)
        policy = renumber(calls, origin, refined_from)
        return GenerationResult(spec, policy, None, best_effort)

    def generate(self, req: GenerationRequest) -> GenerationResult:
        prefix = list(req.prior_policy.calls[: req.frozen_index]) if req.prior_policy else []
        suffix, best_effort = self.plan_suffix(req, prefix)
        origin = Origin.PROBE if req.task.is_probe else (
            Origin.REFINED if req.prior_policy is not None else Origin.GENERATED)
        refined_from = req.frozen_index if req.prior_policy is not None else None
        return self._result(req, prefix + list(suffix), best_effort, origin, refined_from)

    def regenerate_on_feedback(self, req: GenerationRequest) -> GenerationResult:
        prior = list(req.prior_policy.calls)
        first = req.prior_feedback.first
        n = req.frozen_index
        origin = Origin.PROBE if req.task.is_probe else Origin.REFINED
        if first.constraint == "C1" and first.index < len(prior):
            fixed = self._rename(req, prior[first.index])
            if fixed is not None and first.index >= n:
                prior[first.index] = fixed
                return self._result(req, prior, False, origin, n)
        if first.constraint == "C5":
            suffix, best_effort = self.plan_suffix(req, prior)
            if not best_effort and suffix:
                return self._result(req, prior + list(suffix), False, origin, n)
            start = n
        else:
            start = max(n, first.index)
        suffix, best_effort = self.plan_suffix(req, prior[:start])
        return self._result(req, prior[:start] + list(suffix), best_effort, origin, n)

    def _rename(self, req, call: SkillCall) -> SkillCall | None:
        allowed = req.task.allowed_skills or frozenset(req.domain.skills)
        close = sorted(
            name for name in allowed
            if req.domain.skills[name].arity == len(call.args) and edit_distance(name, call.name) <= 1
        )
        if not close:
            return None
        return SkillCall(close[0], call.args, call.source_line)


__all__ = [
    "GenerationError", "GenerationRequest", "GenerationResult", "GeneratorBackend",
    "OracleBackend", "TaskContext", "edit_distance", "generate", "regenerate_on_feedback",
    "spec_for",
]
