"""Probe goals built from validation feedback, and the safety rules for probe policies."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .confidence import CscFeedback
from .planner import LogicVerdict, ground_all
from .symbolic import (
    Domain,
    GroundAction,
    GroundAtom,
    ObservationStore,
    PolicyCode,
    SkillCall,
    Tri,
)

MARKER_PREFIX = "observed_"


class NoProbePossible(Exception):
    """Nothing left to observe: every missing atom is already known."""


class UnobservableAtom(Exception):
    def __init__(self, atoms):
        self.atoms = tuple(atoms)
        super().__init__("no sensing skill observes " + ", ".join(map(str, self.atoms)))


@dataclass(frozen=True)
class ProbeGoal:
    target_atoms: frozenset[GroundAtom]
    origin_skill_index: int
    instruction_text: str
    origin_feedback: tuple[CscFeedback | None, LogicVerdict | None] = (None, None)

    def __post_init__(self):
        if not self.target_atoms:
            raise ValueError("a probe goal needs at least one target atom")

    def to_json(self) -> dict:
        csc_fb, lc_fb = self.origin_feedback
        return {
            "targets": [str(a) for a in sorted(self.target_atoms)],
            "origin_skill_index": self.origin_skill_index,
            "instruction": self.instruction_text,
            "csc_feedback": csc_fb.to_json() if csc_fb else None,
            "lc_feedback": lc_fb.to_json() if lc_fb else None,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def render_probe_instruction(atoms: Iterable[GroundAtom]) -> str:
    return "observe: " + ", ".join(str(a) for a in sorted(atoms))


def make_probe_goal(
    f_n: SkillCall,
    lc_fb: LogicVerdict | None,
    csc_fb: CscFeedback | None,
    obs: ObservationStore,
    domain: Domain | None = None,
    origin_index: int = 0,
) -> ProbeGoal:
    targets = set()
    if lc_fb is not None:
        targets.update(a for a, label in lc_fb.missing if label is Tri.UNKNOWN)
    if csc_fb is not None:
        targets.update(csc_fb.unknown_atoms)
    if domain is not None:
        # drop bookkeeping atoms the domain does not know (e.g. markers)
        targets = {a for a in targets if a.predicate in domain.predicates}
    targets = {a for a in targets if obs.lookup(a) is Tri.UNKNOWN}
    if not targets:
        raise NoProbePossible(f"no unknown atom to observe for {f_n}")
    return ProbeGoal(frozenset(targets), origin_index, render_probe_instruction(targets), (csc_fb, lc_fb))


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    offending_calls: tuple[tuple[int, str, str], ...] = ()


def check_probe_safety(
    policy: PolicyCode | Iterable[SkillCall],
    domain: Domain,
    protected_atoms: Iterable[GroundAtom] = (),
    objects: Mapping[str, str] | None = None,
) -> SafetyVerdict:
    """Every call must be a safe skill; with ``objects`` given, none may delete a protected atom."""
    protected = frozenset(protected_atoms)
    offending = []
    for i, call in enumerate(policy):
        schema = domain.skills.get(call.name)
        if schema is None:
            offending.append((i, call.name, "unknown skill"))
            continue
        if not schema.meta.safe:
            offending.append((i, call.name, "skill is not marked safe"))
            continue
        if protected and objects is not None and len(call.args) == schema.arity:
            try:
                action = domain.ground_call(call.name, call.args, objects)
            except Exception:
                continue
            hit = sorted(action.delete & protected)
            if hit:
                offending.append((i, call.name, f"deletes goal atom {hit[0]}"))
    return SafetyVerdict(not offending, tuple(offending))


def marker(atom: GroundAtom) -> GroundAtom:
    return GroundAtom(MARKER_PREFIX + atom.predicate, atom.args)


def covers(domain: Domain, atom: GroundAtom) -> list[str]:
    """Names of sensing skills with a reveal template matching ``atom``."""
    out = []
    for schema in domain.skills.values():
        if not schema.meta.sensing:
            continue
        for tpl in schema.meta.reveals:
            if tpl.predicate != atom.predicate or len(tpl.terms) != len(atom.args):
                continue
            if all(t.startswith("?") or t == a for t, a in zip(tpl.terms, atom.args)):
                out.append(schema.name)
                break
    return sorted(out)


def observable(domain: Domain, atoms: Iterable[GroundAtom]) -> frozenset[GroundAtom]:
    return frozenset(a for a in atoms if covers(domain, a))


def probe_goal_to_planner_goal(pg: ProbeGoal, domain: Domain) -> frozenset[GroundAtom]:
    uncovered = sorted(a for a in pg.target_atoms if not covers(domain, a))
    if uncovered:
        raise UnobservableAtom(uncovered)
    return frozenset(marker(a) for a in pg.target_atoms)


def probe_action_space(
    domain: Domain,
    objects: Mapping[str, str],
    protected_atoms: Iterable[GroundAtom] = (),
) -> list[GroundAction]:
    """Safe ground actions; sensing ones also produce a marker per revealed atom."""
    protected = frozenset(protected_atoms)
    safe = [n for n, s in domain.skills.items() if s.meta.safe]
    out = []
    for a in ground_all(domain, objects, safe):
        if a.delete & protected:
            continue
        if a.reveals:
            a = replace(a, add=a.add | frozenset(marker(x) for x in a.reveals))
        out.append(a)
    return out


__all__ = [
    "MARKER_PREFIX", "NoProbePossible", "ProbeGoal", "SafetyVerdict", "UnobservableAtom",
    "check_probe_safety", "covers", "make_probe_goal", "marker", "observable",
    "probe_action_space", "probe_goal_to_planner_goal", "render_probe_instruction",
]
