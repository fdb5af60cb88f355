from dataclasses import replace

import pytest

from probeplan.confidence import CscFeedback
from probeplan.planner import LogicVerdict
from probeplan.probe import (
    NoProbePossible,
    ProbeGoal,
    UnobservableAtom,
    check_probe_safety,
    covers,
    make_probe_goal,
    marker,
    probe_action_space,
    probe_goal_to_planner_goal,
)
from probeplan.symbolic import GroundAtom, ObservationStore, SkillCall, Tri, parse_policy

A = GroundAtom.parse
OPEN_MID = SkillCall("open", ("mid",))


def test_goal_from_logic_feedback():
    fb = LogicVerdict(0, ((A("(unlocked mid)"), Tri.UNKNOWN),), 0)
    g = make_probe_goal(OPEN_MID, fb, None, ObservationStore())
    assert g.target_atoms == {A("(unlocked mid)")}
    assert g.instruction_text == "observe: (unlocked mid)"


def test_known_false_cannot_be_probed():
    fb = LogicVerdict(0, ((A("(unlocked mid)"), Tri.FALSE),), 0)
    with pytest.raises(NoProbePossible):
        make_probe_goal(OPEN_MID, fb, None, ObservationStore({A("(unlocked mid)"): False}))


def test_goal_from_csc_feedback():
    csc = CscFeedback(OPEN_MID, 0.3, 0.5, (A("(lit room)"),), (), ())
    g = make_probe_goal(OPEN_MID, LogicVerdict(1), csc, ObservationStore())
    assert g.target_atoms == {A("(lit room)")}


def test_goal_never_targets_known_atoms():
    fb = LogicVerdict(0, ((A("(unlocked mid)"), Tri.UNKNOWN), (A("(unlocked top)"), Tri.UNKNOWN)), 0)
    g = make_probe_goal(OPEN_MID, fb, None, ObservationStore({A("(unlocked top)"): True}))
    assert g.target_atoms == {A("(unlocked mid)")}


def test_empty_probe_goal_rejected():
    with pytest.raises(ValueError):
        ProbeGoal(frozenset(), 0, "observe:")


def test_probe_safety(drawers):
    assert check_probe_safety(parse_policy("check_lock(mid)"), drawers).safe
    verdict = check_probe_safety(parse_policy("force_open(mid)"), drawers)
    assert not verdict.safe and verdict.offending_calls[0][0] == 0
    assert check_probe_safety(parse_policy(""), drawers).safe


def test_probe_safety_protects_goal_atoms(tabletop):
    # a safe skill that would undo the main goal is still refused
    schema = tabletop.skills["take_out"]
    domain = tabletop.with_meta({"take_out": replace(schema.meta, safe=True)})
    objects = {"die_1": "die", "top_drawer": "drawer"}
    protected = {A("(stored die_1)")}
    verdict = check_probe_safety(parse_policy("take_out(die_1, top_drawer)"), domain, protected, objects)
    assert not verdict.safe
    names = {a.name for a in probe_action_space(domain, objects, protected)}
    assert "take_out" not in names


def test_planner_goal_compilation(drawers):
    g = ProbeGoal(frozenset({A("(unlocked mid)")}), 0, "observe: (unlocked mid)")
    assert probe_goal_to_planner_goal(g, drawers) == {marker(A("(unlocked mid)"))}
    assert marker(A("(unlocked mid)")) == A("(observed_unlocked mid)")


def test_unobservable_target(drawers):
    g = ProbeGoal(frozenset({A("(open mid)")}), 0, "observe: (open mid)")
    with pytest.raises(UnobservableAtom):
        probe_goal_to_planner_goal(g, drawers)


def test_light_is_observed_by_the_switch(tabletop):
    assert covers(tabletop, A("(lit room)")) == ["press"]
    assert covers(tabletop, A("(inside die_1 top_drawer)")) == ["check_empty"]


def test_sensing_actions_add_markers(drawers, objects):
    actions = {a.key: a for a in probe_action_space(drawers, objects)}
    assert marker(A("(unlocked top)")) in actions[("check_lock", ("top",))].add
    assert ("open", ("top",)) not in actions
