import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, scenario
from probeplan.simulator import (
    EnvState,
    ObservabilityLevel,
    ScenarioError,
    TabletopEnv,
    dropped_essentials,
    expand_skill,
    load_scenario,
    packaged_scenarios,
    score_episode,
)
from probeplan.symbolic import GroundAtom, GroundingError, SkillCall, Tri, parse_domain

A = GroundAtom.parse
BASE = Path(str(DATA))

DRAWERS = {
    "objects": {"top": "drawer", "mid": "drawer", "low": "drawer", "die_1": "die", "table": "surface",
                "room": "room", "light_switch": "switch"},
    "hidden_init": ["(unlocked top)", "(empty top)", "(empty mid)", "(empty low)", "(at die_1 table)",
                    "(handempty)", "(lit room)", "(controls light_switch room)"],
    "essential": ["(unlocked top)", "(unlocked mid)", "(unlocked low)", "(at die_1 table)"],
    "goal": ["(stored die_1)"],
    "domain_file": "tabletop.pddl",
    "skill_meta_file": "skill_meta.json",
}


def load(**changes):
    data = dict(DRAWERS, **changes)
    return load_scenario(json.dumps(data), BASE, "drawers")


def test_fixture_loads():
    s = load()
    assert sorted(o for o, t in s.objects.items() if t == "drawer") == ["low", "mid", "top"]
    assert {A("(unlocked top)"), A("(unlocked mid)"), A("(unlocked low)")} <= set(s.essential)
    assert s.visibility_rules == ()


def test_unreachable_goal_rejected():
    with pytest.raises(ScenarioError, match="unreachable goal"):
        load(hidden_init=["(at die_1 table)", "(handempty)"], goal=["(inside die_1 mid)"])


def test_bad_atoms_rejected():
    with pytest.raises(ScenarioError):
        load(goal=["(stored die_9)"])
    with pytest.raises(ScenarioError):
        load(goal=[])
    with pytest.raises(ScenarioError):
        load_scenario("[1, 2]", BASE)


def test_packaged_scenarios_load():
    names = {p.stem for p in packaged_scenarios()}
    assert len(names) >= 4
    for name in names:
        assert scenario(name).goal_atoms


def test_complete_knows_every_essential():
    s = load()
    env = TabletopEnv(s, ObservabilityLevel.COMPLETE, 3)
    obs, _ = env.reset()
    assert all(obs.lookup(a) is not Tri.UNKNOWN for a in s.essential)


def test_high_drops_three_of_four():
    s = load()
    first = dropped_essentials(s, ObservabilityLevel.HIGH, 11)
    assert len(first) == 3
    assert first == dropped_essentials(s, ObservabilityLevel.HIGH, 11)
    obs, _ = TabletopEnv(s, ObservabilityLevel.HIGH, 11).reset()
    assert {a for a in s.essential if obs.lookup(a) is Tri.UNKNOWN} == first


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**64 - 1))
def test_levels_are_ordered(seed):
    s = load()
    sizes = {lvl: len(dropped_essentials(s, lvl, seed)) for lvl in ObservabilityLevel}
    assert sizes[ObservabilityLevel.COMPLETE] == 0
    assert sizes[ObservabilityLevel.LOW] == 1
    assert sizes[ObservabilityLevel.HIGH] >= sizes[ObservabilityLevel.LOW]


def test_dark_room_hides_masked_atoms():
    s = load(hidden_init=[a for a in DRAWERS["hidden_init"] if a != "(lit room)"],
             visibility_rules=[{"guard": "(lit room)", "masks": ["at"]}])
    for level in (ObservabilityLevel.HIGH, ObservabilityLevel.LOW, ObservabilityLevel.STOCHASTIC):
        obs, _ = TabletopEnv(s, level, 5).reset()
        assert obs.lookup(A("(at die_1 table)")) is Tri.UNKNOWN
        assert obs.lookup(A("(lit room)")) is Tri.UNKNOWN
    obs, _ = TabletopEnv(s, ObservabilityLevel.COMPLETE, 5).reset()
    assert obs.lookup(A("(at die_1 table)")) is Tri.TRUE


def test_step_success_and_delta():
    s = load()
    env = TabletopEnv(s, ObservabilityLevel.COMPLETE, 0)
    env.reset()
    res = env.step(s.domain.ground_call("open", ["top"], s.objects))
    assert res.succeeded and (A("(open top)"), True) in res.observation_delta


def test_failed_open_breaks_drawer():
    s = load()
    env = TabletopEnv(s, ObservabilityLevel.COMPLETE, 0)
    env.reset()
    res = env.step(s.domain.ground_call("open", ["mid"], s.objects))
    assert not res.succeeded and res.irreversible_triggered
    assert env.state.damaged and env.state.ia_count == 1
    assert A("(broken mid)") in env.state.truth
    assert (A("(broken mid)"), True) in res.observation_delta


def test_sensing_reveals():
    s = load()
    env = TabletopEnv(s, ObservabilityLevel.HIGH, 0)
    env.reset()
    res = env.step(s.domain.ground_call("check_lock", ["mid"], s.objects))
    assert res.succeeded and res.observation_delta == ((A("(unlocked mid)"), False),)


def test_deterministic_replay():
    s = scenario("long_horizon_die_drawer")
    calls = [SkillCall("check_lock", ("top_drawer",)), SkillCall("press", ("light_switch", "room")),
             SkillCall("open", ("middle_drawer",)), SkillCall("check_empty", ("top_drawer",))]

    def trace():
        env = TabletopEnv(s, ObservabilityLevel.STOCHASTIC, 1234)
        obs, _ = env.reset()
        out = [tuple(sorted(obs.known().items()))]
        for c in calls:
            for a in env.expand(c, obs):
                r = env.step(a)
                out.append(r)
        out.append(tuple(sorted(env.state.truth)))
        return out

    assert trace() == trace()


EXPAND_PDDL = """(define (domain arm) (:types drawer)
  (:predicates (near ?d - drawer) (open ?d - drawer))
  (:action open :parameters (?d - drawer) :precondition (and) :effect (and (open ?d)))
  (:action approach :parameters (?d - drawer) :precondition (and) :effect (and (near ?d)))
  (:action pull :parameters (?d - drawer) :precondition (and (near ?d)) :effect (and (open ?d))))"""


def test_expand_skill():
    d = parse_domain(EXPAND_PDDL)
    objects = {"top": "drawer"}
    got = expand_skill(SkillCall("open", ("top",)), None, d, objects, {"open": ["approach(?d)", "pull(?d)"]})
    assert [str(a) for a in got] == ["approach(top)", "pull(top)"]
    assert [str(a) for a in expand_skill(SkillCall("open", ("top",)), None, d, objects)] == ["open(top)"]
    with pytest.raises(GroundingError):
        expand_skill(SkillCall("fly", ("top",)), None, d, objects)


def test_score_episode_examples():
    s = load(goal=["(at die_1 table)", "(handempty)"])
    env = EnvState(set(s.hidden_init), set(), ObservabilityLevel.HIGH)
    assert (score_episode(env, s).sr, score_episode(env, s).gc) == (100.0, 100.0)

    goals = ["(empty top)", "(empty mid)", "(empty low)", "(handempty)", "(lit room)",
             "(at die_1 table)", "(unlocked top)"]
    s = load(goal=goals)
    truth = {A(g) for g in goals[:3]}
    m = score_episode(EnvState(truth, set(), ObservabilityLevel.HIGH), s)
    assert m.sr == 0.0 and m.gc == pytest.approx(42.857, abs=1e-3)

    s = load()
    env = TabletopEnv(s, ObservabilityLevel.COMPLETE, 0)
    env.reset()
    env.step(s.domain.ground_call("open", ["mid"], s.objects))
    m = env.metrics()
    assert m.sr == 0.0 and m.ia >= 1
