"""Skill-level confidence: demo retrieval, success scoring, the combined score and its threshold."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Mapping, Protocol, Sequence

from .planner import LogicVerdict
from .symbolic import Domain, GroundAtom, ObservationStore, SkillCall, Tri, parse_policy

PRIOR_STRENGTH = 1.0
PRIOR_MEAN = 0.5


@dataclass(frozen=True)
class Demonstration:
    skill_name: str
    initial_observation: tuple[tuple[GroundAtom, bool], ...]
    action: SkillCall
    post_observation: tuple[tuple[GroundAtom, bool], ...]
    success: bool

    def __post_init__(self):
        if self.action.name != self.skill_name:
            raise ValueError(f"demo action {self.action.name} does not match skill {self.skill_name}")

    def initial_true(self) -> frozenset[GroundAtom]:
        return frozenset(a for a, v in self.initial_observation if v)

    @classmethod
    def from_json(cls, data: Mapping) -> "Demonstration":
        calls = parse_policy(data["action"]).calls
        if len(calls) != 1:
            raise ValueError(f"demo action must be one call: {data['action']!r}")
        return cls(
            data["skill_name"],
            tuple((GroundAtom.parse(a), bool(v)) for a, v in data["initial_observation"].items()),
            SkillCall(calls[0].name, calls[0].args),
            tuple((GroundAtom.parse(a), bool(v)) for a, v in data.get("post_observation", {}).items()),
            bool(data["success"]),
        )

    def to_json(self) -> dict:
        return {
            "skill_name": self.skill_name,
            "initial_observation": {str(a): v for a, v in self.initial_observation},
            "action": str(self.action),
            "post_observation": {str(a): v for a, v in self.post_observation},
            "success": self.success,
        }


class DemoLibrary:
    def __init__(self, demos: Iterable[Demonstration] = ()):
        self.demos: list[Demonstration] = list(demos)
        self.index: dict[str, list[int]] = {}
        for i, d in enumerate(self.demos):
            self.index.setdefault(d.skill_name, []).append(i)

    def for_skill(self, name: str) -> list[Demonstration]:
        return [self.demos[i] for i in self.index.get(name, ())]

    def __len__(self):
        return len(self.demos)

    @classmethod
    def loads(cls, text: str) -> "DemoLibrary":
        return cls(Demonstration.from_json(d) for d in json.loads(text))

    def dumps(self) -> str:
        return json.dumps([d.to_json() for d in self.demos], indent=2)


def signatures(atoms: Iterable[GroundAtom]) -> frozenset[str]:
    """Argument-free view of atoms: {"pred/arity"}."""
    return frozenset(a.signature for a in atoms)


def jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def _true_atoms(obs) -> frozenset[GroundAtom]:
    if isinstance(obs, ObservationStore):
        return obs.true_atoms()
    return frozenset(obs)


def demo_similarity(demo: Demonstration, obs) -> float:
    return jaccard(signatures(demo.initial_true()), signatures(_true_atoms(obs)))


def retrieve_demos(library: DemoLibrary, f_n: SkillCall, obs, k: int = 5) -> list[Demonstration]:
    """Top-k demos of the same skill by context similarity; ties keep library order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = sorted(
        enumerate(library.for_skill(f_n.name)),
        key=lambda p: (-demo_similarity(p[1], obs), p[0]),
    )
    return [d for _, d in ranked[:k]]


@dataclass
class ScoringContext:
    call: SkillCall
    snippet: str
    obs_atoms: frozenset[GroundAtom]
    obs: ObservationStore
    instruction: str
    demos: list[Demonstration]
    domain: Domain
    objects: Mapping[str, str]
    domain_summary: str = ""
    template: str = "csc_score"

    def __post_init__(self):
        if any(d.skill_name != self.call.name for d in self.demos):
            raise ValueError("scoring context demos must all match the scored skill")


class Scorer(Protocol):
    def score(self, ctx: ScoringContext) -> tuple[float, float]:
        ...


class StubScorer:
    """Similarity-weighted success frequency with a neutral prior."""

    def __init__(self, beta: float = PRIOR_STRENGTH):
        self.beta = beta

    def score(self, ctx: ScoringContext) -> tuple[float, float]:
        num = PRIOR_MEAN * self.beta
        den = self.beta
        for d in ctx.demos:
            w = demo_similarity(d, ctx.obs_atoms)
            num += w * (1.0 if d.success else 0.0)
            den += w
        csc = num / den
        raw = -math.log(csc) if csc > 0 else math.inf
        return csc, raw


def score_csc(backend: Scorer, ctx: ScoringContext) -> tuple[float, float]:
    csc, raw = backend.score(ctx)
    if not 0.0 <= csc <= 1.0:
        raise ValueError(f"scorer returned csc outside [0, 1]: {csc}")
    return csc, raw


def nesyconf(csc: float, lc: int) -> float:
    if not 0.0 <= csc <= 1.0:
        raise ValueError(f"csc must lie in [0, 1], got {csc}")
    if lc not in (0, 1):
        raise ValueError(f"lc must be 0 or 1, got {lc}")
    return csc * lc


# ---------------------------------------------------------------------------
# feedback for low common-sense scores

@dataclass(frozen=True)
class CscFeedback:
    call: SkillCall
    csc: float
    epsilon: float
    unknown_atoms: tuple[GroundAtom, ...]
    unknown_objects: tuple[str, ...]
    evidence: tuple[str, ...]

    @property
    def text(self) -> str:
        problems = [f"- {a} has not been observed yet" for a in self.unknown_atoms]
        problems += [f"- object '{o}' used by {self.call} is not in the scene" for o in self.unknown_objects]
        if not problems:
            problems = ["- no specific gap found; the context differs from successful examples"]
        fixes = []
        if self.unknown_atoms:
            fixes.append("- observe " + ", ".join(map(str, self.unknown_atoms)) + " before this step")
        if self.unknown_objects:
            fixes.append("- use an object from the scene list instead of "
                         + ", ".join(self.unknown_objects))
        if not fixes:
            fixes.append("- gather more observations around the objects of this step")
        return "\n".join([
            "1. Problem Identification:",
            *problems,
            "2. Justification:",
            f"- {self.call} scored {self.csc:.3f}, under the threshold {self.epsilon:.3f}",
            *[f"- {e}" for e in self.evidence],
            "3. Proposed Solutions:",
            *fixes,
            "4. Additional Notes:",
            "- atoms listed above separate successful from failed examples of this skill",
        ])

    def to_json(self) -> dict:
        return {
            "call": str(self.call),
            "csc": self.csc,
            "epsilon": self.epsilon,
            "unknown_atoms": [str(a) for a in self.unknown_atoms],
            "unknown_objects": list(self.unknown_objects),
            "text": self.text,
        }


def decision_relevant_atoms(
    demos: Sequence[Demonstration],
    call: SkillCall,
    domain: Domain,
    objects: Mapping[str, str],
) -> list[GroundAtom]:
    """Ground atoms whose kind appears in successful demos but in no failed one.

    Demo atoms are transferred to the scored call by argument position.
    Arguments not tied to the demo action range over all objects of the
    predicate's parameter type; unary atoms on an action argument also cover
    the other objects of that argument's type.
    """
    good = [d for d in demos if d.success]
    bad = [d for d in demos if not d.success]
    bad_sigs = set()
    for d in bad:
        bad_sigs |= signatures(d.initial_true())
    out = set()
    for d in good:
        for atom in sorted(d.initial_true()):
            if atom.signature in bad_sigs:
                continue
            pred = domain.predicates.get(atom.predicate)
            if pred is None or pred.arity != len(atom.args):
                continue
            pools = []
            for arg, ptype in zip(atom.args, pred.param_types):
                if arg in d.action.args and d.action.args.index(arg) < len(call.args):
                    bound = call.args[d.action.args.index(arg)]
                    if pred.arity == 1 and bound in objects:
                        pools.append(domain.objects_of_type(objects, objects[bound]))
                    else:
                        pools.append([bound])
                else:
                    pools.append(domain.objects_of_type(objects, ptype))
            out.update(GroundAtom(atom.predicate, args) for args in product(*pools))
    return sorted(out)


def make_csc_feedback(ctx: ScoringContext, csc: float, epsilon: float) -> CscFeedback:
    if csc >= epsilon:
        raise ValueError("feedback is only produced for scores below the threshold")
    relevant = decision_relevant_atoms(ctx.demos, ctx.call, ctx.domain, ctx.objects)
    unknown = tuple(a for a in relevant if ctx.obs.lookup(a) is Tri.UNKNOWN)
    missing_objects = tuple(o for o in ctx.call.args if o not in ctx.objects)
    good = sum(1 for d in ctx.demos if d.success)
    evidence = (f"{len(ctx.demos)} similar example(s) retrieved, {good} successful",)
    return CscFeedback(ctx.call, csc, epsilon, unknown, missing_objects, evidence)


# ---------------------------------------------------------------------------

@dataclass
class ConfidenceRecord:
    skill_index: int
    call: str
    csc: float
    lc: int
    nesyconf: float
    csc_feedback: CscFeedback | None = None
    lc_feedback: LogicVerdict | None = None

    def __post_init__(self):
        if self.nesyconf != self.csc * self.lc:
            raise ValueError("combined confidence must equal csc * lc")

    def to_json(self) -> dict:
        return {
            "skill_index": self.skill_index,
            "call": self.call,
            "csc": self.csc,
            "lc": self.lc,
            "nesyconf": self.nesyconf,
            "csc_feedback": self.csc_feedback.to_json() if self.csc_feedback else None,
            "lc_feedback": self.lc_feedback.to_json() if self.lc_feedback else None,
        }


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationSample:
    skill: str
    confidence: float
    success: bool
    informative: bool = True


def lower_quartile(values: Sequence[float]) -> float:
    """Q1 by linear interpolation at rank 0.25 * (N - 1) of the sorted values.

    Arithmetic is exact on the shortest decimal form of each value and rounded
    once at the end, so [0.2, 0.4, 0.6, 0.8] gives 0.35 rather than 0.35000000000000003.
    """
    xs = sorted(Fraction(repr(float(v))) for v in values)
    if not xs:
        raise CalibrationError("no values")
    pos = Fraction(len(xs) - 1, 4)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    frac = pos - lo
    return float(xs[lo] + (xs[hi] - xs[lo]) * frac)


def calibrate_epsilon(samples, min_kept: int = 4) -> float:
    """Threshold from probe outcomes.

    ``samples`` is either a flat iterable of CalibrationSample / (confidence,
    success, informative) tuples, or a mapping skill -> such an iterable.
    """
    if isinstance(samples, Mapping):
        flat = [s for group in samples.values() for s in group]
    else:
        flat = list(samples)
    kept = []
    for s in flat:
        if isinstance(s, CalibrationSample):
            conf, ok, informative = s.confidence, s.success, s.informative
        else:
            conf, ok, informative = s
        if informative and ok:
            kept.append(float(conf))
    if len(kept) < min_kept:
        raise CalibrationError(
            f"insufficient calibration data: {len(kept)} usable sample(s), need {min_kept}")
    return lower_quartile(kept)


__all__ = [
    "CalibrationError", "CalibrationSample", "ConfidenceRecord", "CscFeedback", "DemoLibrary",
    "Demonstration", "Scorer", "ScoringContext", "StubScorer", "calibrate_epsilon",
    "decision_relevant_atoms", "demo_similarity", "jaccard", "lower_quartile",
    "make_csc_feedback", "nesyconf", "retrieve_demos", "score_csc", "signatures",
]
