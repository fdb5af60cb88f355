from importlib import resources

import pytest

from probeplan.simulator import find_scenario, load_scenario_file
from probeplan.symbolic import SkillMeta, load_skill_meta, parse_domain

DATA = resources.files("probeplan") / "data"

DRAWER_PDDL = """
(define (domain drawers)
  (:types drawer item surface)
  (:predicates (unlocked ?d - drawer) (open ?d - drawer) (at ?i - item ?s - surface)
               (inside ?i - item ?d - drawer) (holding ?i - item) (handempty))
  (:action open :parameters (?d - drawer)
    :precondition (and (unlocked ?d) (not (open ?d)))
    :effect (and (open ?d)))
  (:action pick :parameters (?i - item ?s - surface)
    :precondition (and (at ?i ?s) (handempty))
    :effect (and (holding ?i) (not (at ?i ?s)) (not (handempty))))
  (:action place :parameters (?i - item ?d - drawer)
    :precondition (and (holding ?i) (open ?d))
    :effect (and (inside ?i ?d) (handempty) (not (holding ?i))))
  (:action check_lock :parameters (?d - drawer) :precondition (and) :effect (and))
  (:action force_open :parameters (?d - drawer) :precondition (and) :effect (and (open ?d)))
  (:action noop :parameters () :precondition (and) :effect (and)))
"""

DRAWER_METAS = {
    "check_lock": {"safe": True, "sensing": True, "reveals": ["(unlocked ?d)"]},
    "noop": {"safe": True},
}

DRAWER_OBJECTS = {"top": "drawer", "mid": "drawer", "die_1": "item", "table": "surface"}


def drawer_domain():
    return parse_domain(DRAWER_PDDL, {k: SkillMeta.from_json(v) for k, v in DRAWER_METAS.items()})


@pytest.fixture
def drawers():
    return drawer_domain()


@pytest.fixture
def objects():
    return dict(DRAWER_OBJECTS)


@pytest.fixture
def tabletop():
    metas = load_skill_meta((DATA / "skill_meta.json").read_text())
    return parse_domain((DATA / "tabletop.pddl").read_text(), metas)


def scenario(name):
    return load_scenario_file(find_scenario(name))
