import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DRAWER_OBJECTS, drawer_domain
from probeplan.confidence import (
    CalibrationError,
    CalibrationSample,
    ConfidenceRecord,
    DemoLibrary,
    Demonstration,
    ScoringContext,
    StubScorer,
    calibrate_epsilon,
    decision_relevant_atoms,
    jaccard,
    lower_quartile,
    make_csc_feedback,
    nesyconf,
    retrieve_demos,
    score_csc,
)
from probeplan.symbolic import GroundAtom, ObservationStore, SkillCall

A = GroundAtom.parse


def demo(skill, atoms, action, success=True):
    return Demonstration.from_json({
        "skill_name": skill,
        "initial_observation": {a: True for a in atoms},
        "action": action,
        "success": success,
    })


def ctx_for(call, demos, obs_atoms, domain, objects, unknown_obs=None):
    obs = unknown_obs if unknown_obs is not None else ObservationStore({a: True for a in obs_atoms})
    return ScoringContext(call, str(call), frozenset(obs_atoms), obs, "task", list(demos), domain, objects)


def test_retrieval_order():
    lib = DemoLibrary([
        demo("open", ["(unlocked d)", "(lit r)", "(at x s)"], "open(d)"),   # A: shares 2 of 3
        demo("open", ["(unlocked d)", "(holding x)", "(empty d)"], "open(d)"),  # B: shares 1 of 3
        demo("open", ["(broken d)"], "open(d)"),  # C: shares none
        demo("pick", ["(unlocked d)"], "pick(x, s)"),
    ])
    obs = {A("(unlocked top)"), A("(lit room)")}
    got = retrieve_demos(lib, SkillCall("open", ("top",)), obs)
    assert [d.initial_true() for d in got] == [d.initial_true() for d in lib.for_skill("open")]
    assert retrieve_demos(lib, SkillCall("press", ("s", "r")), obs) == []
    assert len(retrieve_demos(lib, SkillCall("open", ("top",)), obs, k=10)) == 3


def test_demo_library_json_round_trip():
    lib = DemoLibrary([demo("open", ["(unlocked d)"], "open(d)", False)])
    again = DemoLibrary.loads(lib.dumps())
    assert again.demos == lib.demos


def test_stub_examples(drawers, objects):
    call = SkillCall("open", ("top",))
    same = ["(unlocked top)"]
    demos = [demo("open", ["(unlocked d)"], "open(d)")] * 2
    csc, raw = score_csc(StubScorer(), ctx_for(call, demos, [A(a) for a in same], drawers, objects))
    assert csc == pytest.approx(2.5 / 3)
    assert math.exp(-raw) == pytest.approx(csc, abs=1e-12)
    csc, _ = score_csc(StubScorer(), ctx_for(call, [], [], drawers, objects))
    assert csc == 0.5


def test_nesyconf_examples():
    assert nesyconf(0.833, 1) == 0.833
    assert nesyconf(0.97, 0) == 0.0
    assert nesyconf(1.0, 1) == 1.0
    with pytest.raises(ValueError):
        nesyconf(1.2, 1)
    with pytest.raises(ValueError):
        nesyconf(0.5, 2)


def test_record_enforces_product():
    ConfidenceRecord(0, "open(top)", 0.6, 1, 0.6)
    with pytest.raises(ValueError):
        ConfidenceRecord(0, "open(top)", 0.6, 0, 0.6)


def test_jaccard_edges():
    assert jaccard(frozenset(), frozenset()) == 0.0
    assert jaccard(frozenset("ab"), frozenset("ab")) == 1.0


sigs = st.frozensets(st.sampled_from(["p/0", "q/1", "r/2", "s/1", "t/2"]))
demo_specs = st.lists(st.tuples(sigs, st.booleans()), max_size=6)


def _demos(specs):
    out = []
    for atoms, ok in specs:
        texts = ["(" + " ".join([s.split("/")[0]] + ["a"] * int(s.split("/")[1])) + ")" for s in sorted(atoms)]
        out.append(demo("open", texts, "open(a)", ok))
    return out


@given(demo_specs, sigs)
def test_stub_bounded_and_consistent(specs, obs_sigs):
    demos = _demos(specs)
    obs_atoms = [A("(" + " ".join([s.split("/")[0]] + ["b"] * int(s.split("/")[1])) + ")") for s in obs_sigs]
    ctx = ctx_for(SkillCall("open", ("top",)), demos, obs_atoms, drawer_domain(), DRAWER_OBJECTS)
    csc, raw = StubScorer().score(ctx)
    assert 0.0 <= csc <= 1.0
    assert raw >= 0.0
    assert abs(math.exp(-raw) - csc) <= 1e-12
    for lc in (0, 1):
        assert nesyconf(csc, lc) == csc * lc
    assert nesyconf(csc, 0) == 0.0


@given(demo_specs, sigs, sigs)
def test_stub_monotone_in_successes(specs, extra, obs_sigs):
    obs_atoms = [A("(" + " ".join([s.split("/")[0]] + ["b"] * int(s.split("/")[1])) + ")") for s in obs_sigs]
    domain = drawer_domain()
    call = SkillCall("open", ("top",))
    base = StubScorer().score(ctx_for(call, _demos(specs), obs_atoms, domain, DRAWER_OBJECTS))[0]
    better = StubScorer().score(ctx_for(call, _demos(specs + [(extra, True)]), obs_atoms, domain, DRAWER_OBJECTS))[0]
    worse = StubScorer().score(ctx_for(call, _demos(specs + [(extra, False)]), obs_atoms, domain, DRAWER_OBJECTS))[0]
    assert worse <= base + 1e-12
    assert better >= base - 1e-12


def test_feedback_names_unknown_atom(tabletop):
    objects = {"top_drawer": "drawer", "middle_drawer": "drawer", "room": "room"}
    demos = [demo("open", ["(unlocked drawer_a)"], "open(drawer_a)", True),
             demo("open", [], "open(drawer_a)", False)]
    call = SkillCall("open", ("middle_drawer",))
    ctx = ctx_for(call, demos, [], tabletop, objects, ObservationStore())
    fb = make_csc_feedback(ctx, 0.3, 0.5)
    assert A("(unlocked middle_drawer)") in fb.unknown_atoms
    section1 = fb.text.split("2. Justification:")[0]
    assert "(unlocked middle_drawer)" in section1
    for title in ("Problem Identification", "Justification", "Proposed Solutions", "Additional Notes"):
        assert title in fb.text


def test_feedback_flags_unknown_object(tabletop):
    objects = {"top_drawer": "drawer"}
    call = SkillCall("pick", ("die_3", "table"))
    ctx = ctx_for(call, [], [], tabletop, objects, ObservationStore())
    fb = make_csc_feedback(ctx, 0.3, 0.5)
    assert fb.unknown_objects == ("die_3", "table")
    assert "die_3" in fb.text.split("2. Justification:")[0]


def test_feedback_requires_low_score(tabletop):
    ctx = ctx_for(SkillCall("open", ("top_drawer",)), [], [], tabletop, {"top_drawer": "drawer"})
    with pytest.raises(ValueError):
        make_csc_feedback(ctx, 0.6, 0.5)


def test_relevant_atoms_expand_siblings(tabletop):
    objects = {"top_drawer": "drawer", "middle_drawer": "drawer", "room": "room"}
    demos = [demo("check_lock", ["(lit room_a)", "(unlocked drawer_a)"], "check_lock(drawer_a)", True),
             demo("check_lock", ["(unlocked drawer_a)"], "check_lock(drawer_a)", False)]
    got = decision_relevant_atoms(demos, SkillCall("check_lock", ("top_drawer",)), tabletop, objects)
    assert got == [A("(lit room)")]


def test_quartile_examples():
    assert calibrate_epsilon([(v, True, True) for v in (0.2, 0.4, 0.6, 0.8)]) == 0.35
    assert calibrate_epsilon([(0.7, True, True)] * 5) == 0.7
    samples = [(0.5, True, True)] * 2 + [(0.5, False, True)] * 4 + [(0.5, True, False)] * 4
    with pytest.raises(CalibrationError, match="insufficient calibration data"):
        calibrate_epsilon(samples)


def test_calibration_accepts_mapping():
    samples = {"open": [CalibrationSample("open", 0.2, True), CalibrationSample("open", 0.4, True)],
               "press": [CalibrationSample("press", 0.6, True), CalibrationSample("press", 0.8, True),
                         CalibrationSample("press", 0.1, False)]}
    assert calibrate_epsilon(samples) == 0.35


@given(st.lists(st.floats(0, 1), min_size=4, max_size=30), st.randoms())
def test_quartile_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert lower_quartile(values) == lower_quartile(shuffled)
    assert min(values) <= lower_quartile(values) <= max(values)
