"""Static checking of policy code against a task specification.

Checks, per call and in order:

    C1  the skill exists (and is allowed for this task)
    C2  argument count matches the skill
    C3  arguments are declared objects of a compatible type
    C4  preconditions hold along the chain of effects
    C6  safety rules: required atoms are established before the guarded skill

and once at the end (index == len(policy)):

    C5  goal atoms hold, and every atom the task asks to observe is revealed

Unknown atoms are treated optimistically in C4: a precondition on an unknown
atom passes and the needed value is recorded as an assumption. C5 and C6 need
atoms that are actually established (observed true or produced by an effect).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .symbolic import (
    AtomTemplate,
    Domain,
    GroundAtom,
    ObservationStore,
    PolicyCode,
    SkillCall,
    ground,
)

CONSTRAINTS = ("C1", "C2", "C3", "C4", "C5", "C6")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SafetyRule:
    skill: str
    requires: tuple[AtomTemplate, ...]

    def to_json(self) -> dict:
        return {"skill": self.skill, "requires": [str(t) for t in self.requires]}

    @classmethod
    def from_json(cls, data: Mapping) -> "SafetyRule":
        return cls(data["skill"], tuple(AtomTemplate.parse(t) for t in data["requires"]))


@dataclass(frozen=True)
class TaskSpec:
    goal_atoms: frozenset[GroundAtom]
    safety_rules: tuple[SafetyRule, ...] = ()
    allowed_skills: frozenset[str] | None = None
    instruction_text: str = ""
    observe_atoms: frozenset[GroundAtom] = frozenset()

    def to_json(self) -> dict:
        return {
            "goal": [str(a) for a in sorted(self.goal_atoms)],
            "observe": [str(a) for a in sorted(self.observe_atoms)],
            "safety_rules": [r.to_json() for r in self.safety_rules],
            "allowed_skills": sorted(self.allowed_skills) if self.allowed_skills is not None else None,
            "instruction": self.instruction_text,
        }


def build_spec(
    goal_atoms: Iterable[GroundAtom],
    domain: Domain,
    safety_rules: Iterable[SafetyRule] = (),
    instruction_text: str = "",
    allowed_skills: Iterable[str] | None = None,
    observe_atoms: Iterable[GroundAtom] = (),
) -> TaskSpec:
    goal = frozenset(goal_atoms)
    observe = frozenset(observe_atoms)
    if not goal and not observe:
        raise SpecError("empty specification")
    rules = []
    seen = set()
    for rule in safety_rules:
        schema = domain.skills.get(rule.skill)
        if schema is None:
            raise SpecError(f"safety rule names unknown skill {rule.skill}")
        for tpl in rule.requires:
            stray = [v for v in tpl.variables() if v not in schema.param_names]
            if stray:
                raise SpecError(f"safety rule for {rule.skill} uses unbound variable {stray[0]}")
        key = (rule.skill, tuple(sorted(rule.requires)))
        if key not in seen:
            seen.add(key)
            rules.append(SafetyRule(rule.skill, tuple(sorted(set(rule.requires)))))
    allowed = None
    if allowed_skills is not None:
        allowed = frozenset(allowed_skills)
        unknown = allowed - set(domain.skills)
        if unknown:
            raise SpecError(f"unknown allowed skill {sorted(unknown)[0]}")
    return TaskSpec(goal, tuple(rules), allowed, instruction_text, observe)


@dataclass(frozen=True)
class Violation:
    index: int
    constraint: str
    message: str
    atoms: tuple[GroundAtom, ...] = ()

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "constraint": self.constraint,
            "atoms": [str(a) for a in self.atoms],
            "message": self.message,
        }


@dataclass(frozen=True)
class VerificationFeedback:
    violations: tuple[Violation, ...]

    def __post_init__(self):
        if not self.violations:
            raise ValueError("feedback needs at least one violation")

    @property
    def first(self) -> Violation:
        return self.violations[0]

    def to_json(self) -> dict:
        return {"violations": [v.to_json() for v in self.violations]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, data: Mapping) -> "VerificationFeedback":
        return cls(tuple(
            Violation(v["index"], v["constraint"], v.get("message", ""),
                      tuple(GroundAtom.parse(a) for a in v.get("atoms", ())))
            for v in data["violations"]
        ))


@dataclass(frozen=True)
class Verified:
    """Successful verdict; ``assumptions`` lists the unknown atoms the chain relied on."""

    assumptions: tuple[tuple[GroundAtom, bool], ...] = ()


def _finish(violations: list[Violation]):
    return VerificationFeedback(tuple(sorted(violations, key=lambda v: (v.index, v.constraint))))


def verify(
    spec: TaskSpec,
    policy: PolicyCode | Iterable[SkillCall],
    domain: Domain,
    obs: ObservationStore,
    objects: Mapping[str, str],
) -> Verified | VerificationFeedback:
    calls = list(policy)
    violations: list[Violation] = []
    value: dict[GroundAtom, bool] = obs.known()
    established = {a for a, v in value.items() if v}
    assumed: dict[GroundAtom, bool] = {}
    revealed: set[GroundAtom] = set()

    def status(atom):
        if atom in value:
            return value[atom]
        return assumed.get(atom)

    for i, call in enumerate(calls):
        schema = domain.skills.get(call.name)
        if schema is None:
            violations.append(Violation(i, "C1", f"unknown skill '{call.name}'"))
            continue
        if spec.allowed_skills is not None and call.name not in spec.allowed_skills:
            violations.append(Violation(i, "C1", f"skill '{call.name}' is not allowed here"))
            continue
        if len(call.args) != schema.arity:
            violations.append(Violation(
                i, "C2", f"{call.name} takes {schema.arity} argument(s), got {len(call.args)}"))
            continue
        bad = []
        for obj, (pname, ptype) in zip(call.args, schema.params):
            if obj not in objects:
                bad.append(f"'{obj}' is not a declared object")
            elif not domain.is_subtype(objects[obj], ptype):
                bad.append(f"'{obj}' is a {objects[obj]}, {pname} needs a {ptype}")
        if bad:
            violations.append(Violation(i, "C3", f"{call}: " + "; ".join(bad)))
            continue
        binding = dict(zip(schema.param_names, call.args))
        action = ground(schema, binding, objects, domain)

        for rule in spec.safety_rules:
            if rule.skill != call.name:
                continue
            unmet = sorted(a for a in (t.substitute(binding) for t in rule.requires)
                           if a not in established)
            if unmet:
                violations.append(Violation(
                    i, "C6", f"{call} requires {', '.join(map(str, unmet))} to be established first",
                    tuple(unmet)))

        broken = []
        for p in sorted(action.pre_pos):
            s = status(p)
            if s is False:
                broken.append(p)
            elif s is None:
                assumed[p] = True
        for p in sorted(action.pre_neg):
            s = status(p)
            if s is True:
                broken.append(p)
            elif s is None:
                assumed[p] = False
        if broken:
            violations.append(Violation(
                i, "C4", f"{call} is not executable: {', '.join(map(str, sorted(broken)))}",
                tuple(sorted(broken))))

        for a in action.delete:
            value[a] = False
            established.discard(a)
        for a in action.add:
            value[a] = True
            established.add(a)
        revealed.update(action.reveals)

    end = len(calls)
    unmet_goal = sorted(g for g in spec.goal_atoms if value.get(g) is not True)
    if unmet_goal:
        violations.append(Violation(
            end, "C5", f"goal not reached: {', '.join(map(str, unmet_goal))}", tuple(unmet_goal)))
    unobserved = sorted(a for a in spec.observe_atoms if a not in revealed and a not in obs)
    if unobserved:
        violations.append(Violation(
            end, "C5", f"never observed: {', '.join(map(str, unobserved))}", tuple(unobserved)))
    if violations:
        return _finish(violations)
    return Verified(tuple(sorted(assumed.items())))


def first_violation_oracle(
    spec: TaskSpec,
    policy: PolicyCode | Iterable[SkillCall],
    domain: Domain,
    obs: ObservationStore,
    objects: Mapping[str, str],
) -> Verified | VerificationFeedback:
    """Reference checker for tests: same contract as ``verify``, written independently."""
    calls = list(policy)
    found = []
    known_true = set()
    known_false = set()
    for atom, v in obs.known().items():
        (known_true if v else known_false).add(atom)
    hyp_true = set()
    hyp_false = set()
    seen_reveal = set()

    def descends(t, ancestor):
        if ancestor == "object":
            return True
        while t is not None:
            if t == ancestor:
                return True
            t = domain.types[t].parent if t in domain.types else None
        return False

    def inst(terms, env):
        return tuple(env.get(x, x) for x in terms)

    for idx in range(len(calls)):
        c = calls[idx]
        if c.name not in domain.skills:
            found.append(Violation(idx, "C1", "no such skill"))
            continue
        if spec.allowed_skills is not None and c.name not in spec.allowed_skills:
            found.append(Violation(idx, "C1", "skill not permitted"))
            continue
        sk = domain.skills[c.name]
        if len(sk.params) != len(c.args):
            found.append(Violation(idx, "C2", "wrong number of arguments"))
            continue
        type_ok = True
        for k in range(len(c.args)):
            o = c.args[k]
            if o not in objects or not descends(objects[o], sk.params[k][1]):
                type_ok = False
        if not type_ok:
            found.append(Violation(idx, "C3", "bad argument"))
            continue
        env = {sk.params[k][0]: c.args[k] for k in range(len(c.args))}

        for r in spec.safety_rules:
            if r.skill == c.name:
                need = [GroundAtom(t.predicate, inst(t.terms, env)) for t in r.requires]
                lacking = sorted(set(a for a in need if a not in known_true))
                if lacking:
                    found.append(Violation(idx, "C6", "unsafe", tuple(lacking)))

        bad = []
        for lit in sorted(sk.preconditions):
            a = GroundAtom(lit.atom.predicate, inst(lit.atom.terms, env))
            if lit.positive:
                if a in known_false or (a not in known_true and a in hyp_false):
                    bad.append(a)
                elif a not in known_true and a not in hyp_true:
                    hyp_true.add(a)
            else:
                if a in known_true or (a not in known_false and a in hyp_true):
                    bad.append(a)
                elif a not in known_false and a not in hyp_false:
                    hyp_false.add(a)
        if bad:
            found.append(Violation(idx, "C4", "precondition", tuple(sorted(set(bad)))))

        adds, dels = [], []
        for lit in sk.effects:
            a = GroundAtom(lit.atom.predicate, inst(lit.atom.terms, env))
            (adds if lit.positive else dels).append(a)
        for a in dels:
            known_true.discard(a)
            known_false.add(a)
        for a in adds:
            known_false.discard(a)
            known_true.add(a)
        for tpl in sk.meta.reveals:
            seen_reveal.update(domain.expand_template(tpl, env, objects))

    n = len(calls)
    g = tuple(sorted(a for a in spec.goal_atoms if a not in known_true))
    if g:
        found.append(Violation(n, "C5", "goal", g))
    o = tuple(sorted(a for a in spec.observe_atoms if a not in seen_reveal and a not in obs))
    if o:
        found.append(Violation(n, "C5", "observe", o))
    if not found:
        return Verified()
    found.sort(key=lambda v: (v.index, v.constraint))
    return VerificationFeedback(tuple(found))


__all__ = [
    "CONSTRAINTS", "SafetyRule", "SpecError", "TaskSpec", "Verified", "VerificationFeedback",
    "Violation", "build_spec", "first_violation_oracle", "verify",
]
