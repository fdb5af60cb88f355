import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scenario
from probeplan.generator import (
    GenerationError,
    GenerationRequest,
    GenerationResult,
    OracleBackend,
    TaskContext,
    edit_distance,
    generate,
    regenerate_on_feedback,
    spec_for,
)
from probeplan.simulator import ObservabilityLevel, TabletopEnv
from probeplan.symbolic import GroundAtom, PolicyCode, SkillCall, parse_policy
from probeplan.verifier import Verified, Violation, VerificationFeedback, verify

A = GroundAtom.parse


def setup(name, level=ObservabilityLevel.COMPLETE, seed=0):
    s = scenario(name)
    obs, g = TabletopEnv(s, level, seed).reset()
    task = TaskContext(g, s.goal_atoms, s.objects, s.safety_rules)
    return s, obs, task


def test_complete_locked_drawer_opens_top():
    s, obs, task = setup("object_interaction_locked_drawer")
    res = generate(OracleBackend(), GenerationRequest(task, obs, s.domain))
    assert [str(c) for c in res.policy] == ["open(top_drawer)"]
    assert not res.best_effort
    assert isinstance(verify(res.spec, res.policy, s.domain, obs, s.objects), Verified)


def test_unobserved_world_gives_best_effort():
    s, obs, task = setup("long_horizon_die_drawer", ObservabilityLevel.HIGH, 3)
    res = generate(OracleBackend(), GenerationRequest(task, obs, s.domain))
    assert res.best_effort and len(res.policy) > 0


def test_dark_room_probe_presses_switch():
    s, obs, _ = setup("auxiliary_dark_drawer", ObservabilityLevel.HIGH, 0)
    safe = frozenset(n for n, k in s.domain.skills.items() if k.meta.safe)
    probe = TaskContext("observe: (lit room)", frozenset(), s.objects, (), safe,
                        frozenset({A("(lit room)")}), s.goal_atoms)
    res = generate(OracleBackend(), GenerationRequest(probe, obs, s.domain))
    assert [str(c) for c in res.policy] == ["press(light_switch, room)"]


def test_typo_is_repaired():
    s, obs, task = setup("object_interaction_locked_drawer")
    prior = parse_policy("opn(top_drawer)")
    fb = VerificationFeedback((Violation(0, "C1", (), "unknown skill opn"),))
    res = regenerate_on_feedback(OracleBackend(), GenerationRequest(task, obs, s.domain, prior_policy=prior,
                                                                    prior_feedback=fb))
    assert [str(c) for c in res.policy] == ["open(top_drawer)"]


def test_repair_keeps_prefix_before_violation():
    s, obs, task = setup("long_horizon_die_drawer")
    prior = parse_policy("check_lock(top_drawer)\nopen(middle_drawer)\npick(die_1, table)")
    fb = verify(spec_for(task, s.domain), prior, s.domain, obs, s.objects)
    assert fb.first.index == 1 and fb.first.constraint == "C4"
    res = regenerate_on_feedback(OracleBackend(), GenerationRequest(task, obs, s.domain, prior_policy=prior,
                                                                    prior_feedback=fb))
    assert res.policy.keys()[:1] == prior.keys()[:1]
    assert isinstance(verify(res.spec, res.policy, s.domain, obs, s.objects), Verified)


def test_regeneration_needs_feedback():
    s, obs, task = setup("object_interaction_locked_drawer")
    with pytest.raises(ValueError):
        regenerate_on_feedback(OracleBackend(), GenerationRequest(task, obs, s.domain,
                                                                  prior_policy=parse_policy("open(top_drawer)")))


def test_frozen_index_validated():
    s, obs, task = setup("object_interaction_locked_drawer")
    with pytest.raises(ValueError):
        GenerationRequest(task, obs, s.domain, frozen_index=1)
    with pytest.raises(ValueError):
        GenerationRequest(task, obs, s.domain, prior_policy=parse_policy("open(top_drawer)"), frozen_index=2)


class PrefixBreaker:
    def generate(self, req):
        return GenerationResult(None, PolicyCode((SkillCall("open", ("bottom_drawer",)),)))

    regenerate_on_feedback = generate


def test_prefix_violation_detected():
    s, obs, task = setup("object_interaction_locked_drawer")
    req = GenerationRequest(task, obs, s.domain, prior_policy=parse_policy("open(top_drawer)"), frozen_index=1)
    with pytest.raises(GenerationError):
        generate(PrefixBreaker(), req)


calls = st.sampled_from([
    "check_lock(top_drawer)", "press(light_switch, room)", "open(top_drawer)", "pick(die_1, table)",
    "place(die_1, top_drawer)", "opn(top_drawer)", "open(die_1)", "take_out(trash_1, top_drawer)",
])


@settings(deadline=None, max_examples=40)
@given(st.lists(calls, min_size=1, max_size=5), st.data(), st.sampled_from(list(ObservabilityLevel)))
def test_frozen_prefix_law(lines, data, level):
    s, obs, task = setup("long_horizon_die_drawer", level, 9)
    prior = parse_policy("\n".join(lines))
    n = data.draw(st.integers(0, len(prior)))
    req = GenerationRequest(task, obs, s.domain, prior_policy=prior, frozen_index=n)
    res = generate(OracleBackend(), req)
    assert res.policy.keys()[:n] == prior.keys()[:n]
    fb = verify(res.spec, prior, s.domain, obs, s.objects)
    if isinstance(fb, VerificationFeedback):
        res = regenerate_on_feedback(OracleBackend(), GenerationRequest(
            task, obs, s.domain, prior_policy=prior, prior_feedback=fb, frozen_index=n))
        assert res.policy.keys()[:n] == prior.keys()[:n]


def test_edit_distance():
    assert edit_distance("opn", "open") == 1
    assert edit_distance("", "abc") == 3
    assert edit_distance("pick", "pick") == 0
