"""Seeded, partially observable tabletop simulator over the symbolic domain."""

from __future__ import annotations

import enum
import json
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .confidence import DemoLibrary
from .planner import SearchLimitExceeded, SearchLimits, search_plan
from .symbolic import (
    Domain,
    DomainError,
    GroundAction,
    GroundAtom,
    GroundingError,
    ObservationStore,
    ParseError,
    SkillCall,
    check_atom,
    load_skill_meta,
    parse_domain,
    parse_policy,
)
from .verifier import SafetyRule

DATA_DIR = resources.files("probeplan") / "data"


class ScenarioError(Exception):
    pass


class ObservabilityLevel(enum.Enum):
    HIGH = "High"
    LOW = "Low"
    STOCHASTIC = "Stochastic"
    COMPLETE = "Complete"

    @classmethod
    def parse(cls, text: str) -> "ObservabilityLevel":
        for level in cls:
            if level.value.lower() == text.strip().lower():
                return level
        raise ValueError(f"unknown observability level {text!r}")


@dataclass(frozen=True)
class VisibilityRule:
    guard: GroundAtom
    masks: frozenset[str]


@dataclass
class Scenario:
    name: str
    task_type: str
    domain: Domain
    objects: dict[str, str]
    hidden_init: frozenset[GroundAtom]
    essential: tuple[GroundAtom, ...]
    visibility_rules: tuple[VisibilityRule, ...]
    instruction: str
    goal_atoms: frozenset[GroundAtom]
    safety_rules: tuple[SafetyRule, ...]
    expansions: dict[str, tuple[str, ...]] = field(default_factory=dict)
    demos: DemoLibrary = field(default_factory=DemoLibrary)
    calibration: tuple[SkillCall, ...] = ()
    source: str = ""

    def truth_value(self, atom: GroundAtom) -> bool:
        return atom in self.hidden_init


@dataclass
class EnvState:
    truth: set[GroundAtom]
    revealed: set[GroundAtom]
    level: ObservabilityLevel
    damaged: bool = False
    ia_count: int = 0
    step_count: int = 0


@dataclass(frozen=True)
class StepResult:
    succeeded: bool
    observation_delta: tuple[tuple[GroundAtom, bool], ...]
    irreversible_triggered: bool = False


@dataclass(frozen=True)
class Metrics:
    sr: float
    gc: float
    ia: int

    def to_json(self) -> dict:
        return {"sr": self.sr, "gc": self.gc, "ia": self.ia}


# ---------------------------------------------------------------------------
# loading

def _resolve(ref: str, base_dir: Path | None):
    if base_dir is not None:
        p = Path(base_dir) / ref
        if p.exists():
            return p
    p = DATA_DIR / ref
    if p.is_file():
        return p
    raise ScenarioError(f"referenced file not found: {ref}")


def _atoms(texts, what) -> list[GroundAtom]:
    out = []
    for t in texts:
        try:
            out.append(GroundAtom.parse(t))
        except (ValueError, ParseError) as exc:
            raise ScenarioError(f"malformed atom in {what}: {t!r} ({exc})") from None
    return out


def load_scenario(text: str, base_dir: str | Path | None = None, name: str | None = None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("objects", "hidden_init", "goal"):
        if key not in data:
            raise ScenarioError(f"scenario lacks '{key}'")
    base = Path(base_dir) if base_dir is not None else None
    try:
        metas = {}
        if data.get("skill_meta_file"):
            metas = load_skill_meta(_resolve(data["skill_meta_file"], base).read_text())
        domain = parse_domain(_resolve(data.get("domain_file", "tabletop.pddl"), base).read_text(), metas)
    except (DomainError, ParseError) as exc:
        raise ScenarioError(f"domain error: {exc}") from None

    objects = dict(data["objects"])
    for obj, t in objects.items():
        if t not in domain.types:
            raise ScenarioError(f"object {obj} has undeclared type {t}")
    hidden = _atoms(data["hidden_init"], "hidden_init")
    essential = _atoms(data.get("essential", ()), "essential")
    goal = _atoms(data["goal"], "goal")
    rules = []
    for r in data.get("visibility_rules", ()):
        guard = _atoms([r["guard"]], "visibility guard")[0]
        rules.append(VisibilityRule(guard, frozenset(r.get("masks", ()))))
    for atom in hidden + essential + goal + [r.guard for r in rules]:
        try:
            check_atom(domain, atom, objects)
        except DomainError as exc:
            raise ScenarioError(str(exc)) from None
    for r in rules:
        for p in r.masks:
            if p not in domain.predicates:
                raise ScenarioError(f"visibility rule masks unknown predicate {p}")
    if not goal:
        raise ScenarioError("scenario goal is empty")
    try:
        safety = tuple(SafetyRule.from_json(r) for r in data.get("safety_rules", ()))
    except (KeyError, ValueError, ParseError) as exc:
        raise ScenarioError(f"malformed safety rule: {exc}") from None
    for r in safety:
        if r.skill not in domain.skills:
            raise ScenarioError(f"safety rule for unknown skill {r.skill}")

    expansions = {}
    for skill, templates in data.get("expansions", {}).items():
        if skill not in domain.skills:
            raise ScenarioError(f"expansion for unknown skill {skill}")
        expansions[skill] = tuple(templates)
    demos = DemoLibrary()
    if data.get("demo_file"):
        demos = DemoLibrary.loads(_resolve(data["demo_file"], base).read_text())
    try:
        calibration = tuple(c for t in data.get("calibration", ()) for c in parse_policy(t).calls)
    except ParseError as exc:
        raise ScenarioError(f"malformed calibration call: {exc}") from None

    scenario = Scenario(
        name=name or data.get("name", "scenario"),
        task_type=data.get("task_type", "general"),
        domain=domain,
        objects=objects,
        hidden_init=frozenset(hidden),
        essential=tuple(essential),
        visibility_rules=tuple(rules),
        instruction=data.get("instruction", ""),
        goal_atoms=frozenset(goal),
        safety_rules=safety,
        expansions=expansions,
        demos=demos,
        calibration=calibration,
        source=str(base / f"{name}.json") if base and name else "",
    )
    try:
        plan = search_plan(domain, scenario.hidden_init, scenario.goal_atoms, objects=objects)
    except SearchLimitExceeded:
        plan = None
    if plan is None:
        raise ScenarioError("unreachable goal")
    return scenario


def load_scenario_file(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return load_scenario(text, path.parent, path.stem)


def packaged_scenarios() -> list[Path]:
    root = DATA_DIR / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def find_scenario(ref: str) -> Path:
    """A path, or the name of a packaged scenario."""
    p = Path(ref)
    if p.exists():
        return p
    for q in packaged_scenarios():
        if q.stem == ref:
            return q
    raise ScenarioError(f"no such scenario: {ref}")


# ---------------------------------------------------------------------------
# dynamics

def _masked(scenario: Scenario, truth, atom: GroundAtom) -> bool:
    return any(atom.predicate in r.masks and r.guard not in truth for r in scenario.visibility_rules)


def dropped_essentials(scenario: Scenario, level: ObservabilityLevel, seed: int) -> set[GroundAtom]:
    rng = random.Random(seed)
    order = list(scenario.essential)
    rng.shuffle(order)
    n = len(order)
    if level is ObservabilityLevel.HIGH:
        return set(order[: min(n, math.ceil(n / 2) + 1)])
    if level is ObservabilityLevel.LOW:
        return set(order[: min(n, 1)])
    if level is ObservabilityLevel.STOCHASTIC:
        return {a for a in scenario.essential if rng.random() < 0.5}
    return set()


def reset(scenario: Scenario, level: ObservabilityLevel, seed: int):
    """Fresh episode: (EnvState, initial observations, instruction)."""
    truth = set(scenario.hidden_init)
    drop = dropped_essentials(scenario, level, seed)
    known = {}
    for atom in scenario.domain.atom_universe(scenario.objects):
        if atom in drop:
            continue
        if level is not ObservabilityLevel.COMPLETE:
            if _masked(scenario, truth, atom):
                continue
            if any(atom == r.guard for r in scenario.visibility_rules):
                continue
        known[atom] = atom in truth
    env = EnvState(truth, set(known), level)
    obs = ObservationStore()
    obs.merge(sorted(known.items()))
    return env, obs, scenario.instruction


def step(env: EnvState, action: GroundAction, scenario: Scenario) -> StepResult:
    truth = env.truth
    holds = action.pre_pos <= truth and not (action.pre_neg & truth)
    irreversible = False
    if holds:
        touched = action.add | action.delete
        truth -= action.delete
        truth |= action.add
    else:
        touched = frozenset()
        if action.meta.irreversible_on_violation:
            touched = action.damage_add | action.damage_del
            truth -= action.damage_del
            truth |= action.damage_add
            env.damaged = True
            env.ia_count += 1
            irreversible = True
    seen = set(touched)
    if holds:
        seen.update(action.reveals)
    if env.level is not ObservabilityLevel.COMPLETE:
        seen = {a for a in seen if not _masked(scenario, truth, a)}
    delta = tuple((a, a in truth) for a in sorted(seen))
    env.revealed.update(seen)
    env.step_count += 1
    return StepResult(holds, delta, irreversible)


_CALL_TEMPLATE = re.compile(r"\s*([a-z_][a-z0-9_]*)\s*\((.*)\)\s*\Z")


def expand_skill(
    f: SkillCall,
    obs: ObservationStore | None,
    domain: Domain,
    objects: Mapping[str, str],
    expansions: Mapping[str, Sequence[str]] | None = None,
) -> list[GroundAction]:
    schema = domain.skills.get(f.name)
    if schema is None:
        raise GroundingError(f"unknown skill {f.name}")
    templates = (expansions or {}).get(f.name)
    if not templates:
        return [domain.ground_call(f.name, f.args, objects)]
    if len(f.args) != schema.arity:
        raise GroundingError(f"{f.name} expects {schema.arity} arguments, got {len(f.args)}")
    binding = dict(zip(schema.param_names, f.args))
    out = []
    for tpl in templates:
        m = _CALL_TEMPLATE.match(tpl)
        if not m:
            raise GroundingError(f"malformed expansion template {tpl!r}")
        args = [a.strip() for a in m.group(2).split(",") if a.strip()]
        try:
            args = [binding[a] if a.startswith("?") else a for a in args]
        except KeyError as exc:
            raise GroundingError(f"expansion of {f.name} uses unbound {exc.args[0]}") from None
        out.append(domain.ground_call(m.group(1), args, objects))
    return out


def goal_reachable(scenario: Scenario, truth, limits: SearchLimits | None = None) -> bool:
    try:
        return search_plan(scenario.domain, frozenset(truth), scenario.goal_atoms,
                           objects=scenario.objects, limits=limits) is not None
    except SearchLimitExceeded:
        return True


def score_episode(env: EnvState, scenario: Scenario) -> Metrics:
    goal = scenario.goal_atoms
    hit = sum(1 for g in goal if g in env.truth)
    sr = 100.0 if hit == len(goal) else 0.0
    gc = 100.0 * hit / len(goal)
    return Metrics(sr, gc, env.ia_count)


class TabletopEnv:
    """Stateful wrapper binding a scenario to one running episode."""

    def __init__(self, scenario: Scenario, level: ObservabilityLevel, seed: int):
        self.scenario = scenario
        self.level = level
        self.seed = seed
        self.state: EnvState | None = None

    def reset(self):
        self.state, obs, g = reset(self.scenario, self.level, self.seed)
        return obs, g

    def step(self, action: GroundAction) -> StepResult:
        return step(self.state, action, self.scenario)

    def expand(self, f: SkillCall, obs) -> list[GroundAction]:
        return expand_skill(f, obs, self.scenario.domain, self.scenario.objects, self.scenario.expansions)

    def metrics(self) -> Metrics:
        return score_episode(self.state, self.scenario)

    def fatally_damaged(self) -> bool:
        return self.state.damaged and not goal_reachable(self.scenario, self.state.truth)


__all__ = [
    "EnvState", "Metrics", "ObservabilityLevel", "Scenario", "ScenarioError", "StepResult",
    "TabletopEnv", "VisibilityRule", "dropped_essentials", "expand_skill", "find_scenario",
    "goal_reachable", "load_scenario", "load_scenario_file", "packaged_scenarios", "reset",
    "score_episode", "step",
]
