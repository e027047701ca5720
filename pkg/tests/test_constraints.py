from __future__ import annotations

import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccgen.constraints import (DEFAULT_ALIGN_TOL, DEFAULT_DIRECTION_TOL, DEFAULT_SIMULTANEOUS_TOL,
                               TEMPLATES, AlignedGrippers, ApproachDirection, BoxRegion, Category,
                               CollisionAvoidance, ConstraintSet, ContactPoint, Interface, KeepOut,
                               Relation, Sequential, Simultaneous, SphereRegion, TimeShareSpace,
                               dispatch, parse_constraint, parse_set, render)
from ccgen.errors import CategoryMismatch, ParseError

OUTPUT_CONTENT = [
    ("Logical", "The gripper of Agent_1 must be perpendicular to {Object}.",
     ApproachDirection(1, "{Object}", Relation.PERPENDICULAR)),
    ("Logical", "Agent_1 and Agent_2 must maintain a consistent gripper height.",
     AlignedGrippers((1, 2))),
    ("Temporal", "Agent_1 and Agent_3 perform tasks simultaneously without interference.",
     Simultaneous((1, 3))),
    ("Temporal", "Agent_2 must complete the task before Agent_4 can begin their action.",
     Sequential((2, None), (4, None))),
    ("Spatial", "Agent_1 should not occupy the same space as Agent_3 in the designated area.",
     KeepOut((1,), None, (3,))),
]

VALIDATION = [
    ("Logical", "The gripper of Agent_1 must be perpendicular to Object_A when grasping.",
     ApproachDirection(1, "Object_A", Relation.PERPENDICULAR)),
    ("Logical", "Agent_3 must grasp Object_B at its left point.", ContactPoint(3, "Object_B", "left")),
    ("Spatial", "Agent_2 must not intersect with the trajectories of other agents.",
     CollisionAvoidance(2, "All")),
    ("Temporal", "Agent_4 must place Object_C only after Agent_5 opens the container.",
     Sequential((5, None), (4, None))),
]


@pytest.mark.parametrize("category,sentence,expected", OUTPUT_CONTENT + VALIDATION)
def test_reference_sentences_parse(category, sentence, expected):
    assert parse_constraint(category, sentence) == expected


def test_sentence_without_agents_is_rejected():
    with pytest.raises(ParseError):
        parse_constraint("Spatial", "Agents must avoid colliding with each other when moving in close proximity.")


def test_every_template_example_parses():
    for t in TEMPLATES:
        c = parse_constraint(t.category, t.example)
        assert c.category == t.category, t.name


# --- fillings ---------------------------------------------------------------

def _agents(rng, k):
    return sorted(rng.sample(range(1, 10), k))


def _list(ids):
    names = [f"Agent_{a}" for a in ids]
    return names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]


def _ident(rng):
    stem = rng.choice(["Object", "cube", "Box", "lid", "camera", "meat"])
    tail = rng.choice(["", "_A", "_2", "_blue", "x"])
    return stem + tail if rng.random() < 0.9 else "{" + stem + "}"


def _num(rng, lo, hi):
    return repr(round(rng.uniform(lo, hi), 3))


def _tol_rad(rng):
    return "" if rng.random() < 0.4 else f" within {repr(round(rng.uniform(0.01, 1.5), 4))} rad"


FILLERS = {
    "approach_direction": lambda r: (f"The gripper of Agent_{r.randint(1, 9)} must be "
                                     f"{r.choice(['perpendicular to', 'parallel to', 'facing'])} {_ident(r)}"
                                     f"{_tol_rad(r)}."),
    "approach_direction_is": lambda r: (f"The gripper of Agent_{r.randint(1, 9)} is "
                                        f"{r.choice(['perpendicular to', 'parallel to', 'facing'])} "
                                        f"{_ident(r)} within {r.randint(1, 60)} degrees when grasping."),
    "contact_point": lambda r: (f"Agent_{r.randint(1, 9)} must {r.choice(['grasp', 'press', 'touch'])} "
                                f"{_ident(r)} at its {r.choice(['left', 'right', 'top', 'handle_1'])} point."),
    "aligned_grippers": lambda r: (f"{_list(_agents(r, r.randint(2, 4)))} must maintain a consistent gripper "
                                   f"height{'' if r.random() < 0.5 else ' within ' + _num(r, 0.001, 0.1) + ' m'}."),
    "aligned_grippers_keep": lambda r: (f"Keep the gripper height consistent between "
                                        f"{_list(_agents(r, r.randint(2, 3)))} to hold the tray level."),
    "collision_all": lambda r: f"Avoid collision between Agent_{r.randint(1, 9)} and other Agents.",
    "collision_list": lambda r: (lambda ids: f"Avoid collision between Agent_{ids[0]} and {_list(ids[1:])}.")(
        r.sample(range(1, 10), r.randint(2, 4))),
    "collision_trajectories": lambda r: (f"Agent_{r.randint(1, 9)} must not intersect with the trajectories "
                                         f"of other agents."),
    "keepout_designated": lambda r: (lambda ids: f"{_list(ids[:-1])} should not occupy the same space as "
                                     f"Agent_{ids[-1]} in the designated area.")(r.sample(range(1, 10), r.randint(2, 4))),
    "keepout_box": lambda r: (lambda lo: (f"{_list(_agents(r, r.randint(1, 3)))} must stay out of the box from "
                                          f"({lo[0]!r}, {lo[1]!r}, {lo[2]!r}) to "
                                          f"({lo[0] + 0.25!r}, {lo[1] + 0.125!r}, {lo[2] + 0.5!r})."))(
        [round(r.uniform(-1, 1), 3) for _ in range(3)]),
    "keepout_sphere": lambda r: (f"{_list(_agents(r, r.randint(1, 3)))} must stay out of the sphere at "
                                 f"({_num(r, -1, 1)}, {_num(r, -1, 1)}, {_num(r, 0, 1)}) with radius "
                                 f"{_num(r, 0.01, 0.5)}."),
    "sequential": lambda r: (lambda a, b: (f"Agent_{a} must complete "
                                           f"{r.choice(['the task', 'subgoal s' + str(r.randint(1, 9))])} before "
                                           f"Agent_{b} can begin "
                                           f"{r.choice(['their action', 'subgoal g' + str(r.randint(1, 9))])}."))(
        *r.sample(range(1, 10), 2)),
    "sequential_only_after": lambda r: (lambda a, b: (f"Agent_{a} must {r.choice(['place', 'lift', 'press'])} "
                                                      f"{_ident(r)} only after Agent_{b} "
                                                      f"{r.choice(['opens the lid', 'releases it', 'moves away'])}."))(
        *r.sample(range(1, 10), 2)),
    "simultaneous": lambda r: (f"{_list(_agents(r, r.randint(2, 4)))} perform tasks simultaneously"
                               f"{'' if r.random() < 0.5 else ' within ' + str(r.randint(1, 40)) + ' ticks'}"
                               f" without interference."),
    "time_share_space": lambda r: f"{_list(_agents(r, r.randint(2, 4)))} could share the same space chronologically.",
}


def test_every_template_has_a_filler():
    assert set(FILLERS) == {t.name for t in TEMPLATES}


@pytest.mark.parametrize("template", TEMPLATES, ids=lambda t: t.name)
def test_render_parse_round_trip_50_fillings(template):
    rng = random.Random(template.name)
    for _ in range(50):
        sentence = FILLERS[template.name](rng)
        c = parse_constraint(template.category, sentence)
        text = render(c)
        assert parse_constraint(template.category, text) == c
        if template.canonical:
            assert text == sentence


# --- property tests over constraint values ----------------------------------

agent = st.integers(1, 12)
idents = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,8}", fullmatch=True)
agent_sets = st.lists(agent, min_size=2, max_size=5, unique=True).map(tuple)
floats = st.floats(-5, 5, allow_nan=False).map(lambda x: round(x, 6))

constraints = st.one_of(
    st.builds(ApproachDirection, agent, idents, st.sampled_from(list(Relation)),
              st.floats(1e-4, math.pi, allow_nan=False)),
    st.builds(ContactPoint, agent, idents, idents, st.sampled_from(["grasp", "press", "touch"])),
    st.builds(AlignedGrippers, agent_sets, st.just("Height"), st.floats(1e-4, 1.0)),
    st.builds(CollisionAvoidance, agent, st.just("All")),
    agent_sets.map(lambda ids: CollisionAvoidance(ids[0], ids[1:])),
    agent_sets.map(lambda ids: KeepOut(ids[:-1], None, ids[-1:])),
    st.builds(lambda ids, p, r: KeepOut(ids[:1], SphereRegion(p, r)), agent_sets,
              st.tuples(floats, floats, floats), st.floats(1e-3, 2.0)),
    st.builds(lambda ids, p, d: KeepOut(ids, BoxRegion(p, tuple(a + b for a, b in zip(p, d)))), agent_sets,
              st.tuples(floats, floats, floats), st.tuples(*[st.floats(0.01, 1.0)] * 3)),
    st.builds(lambda ids, g1, g2: Sequential((ids[0], g1), (ids[1], g2)), agent_sets,
              st.none() | idents, st.none() | idents),
    st.builds(Simultaneous, agent_sets, st.integers(1, 200)),
    st.builds(TimeShareSpace, agent_sets),
)


@given(constraints)
def test_parse_render_identity(c):
    assert parse_constraint(c.category, render(c)) == c


@given(st.text(max_size=120))
def test_fuzz_only_typed_errors(text):
    for cat in Category:
        try:
            parse_constraint(cat, text)
        except (ParseError, CategoryMismatch):
            pass


def test_parse_error_reports_span_and_expected():
    with pytest.raises(ParseError) as info:
        parse_constraint("Logical", "The gripper of Agent_1 must wobble near Object_A.")
    err = info.value
    assert 0 < err.span[0] < err.span[1]
    assert "approach_direction" in err.expected


def test_category_mismatch():
    with pytest.raises(CategoryMismatch):
        parse_constraint("Spatial", "Agent_2 must complete the task before Agent_4 can begin their action.")


def test_build_failure_is_parse_error():
    with pytest.raises(ParseError):
        parse_constraint("Spatial", "Agent_1 must stay out of the box from (1.0, 0.0, 0.0) to (0.0, 1.0, 1.0).")
    with pytest.raises(ParseError):
        parse_constraint("Temporal", "Agent_2 and Agent_2 could share the same space chronologically.")


def test_degrees_are_converted():
    c = parse_constraint("Logical", "The gripper of Agent_1 must be parallel to lid within 30 degrees.")
    assert c.tolerance == pytest.approx(math.radians(30))


def test_defaults():
    assert parse_constraint("Logical", "The gripper of Agent_1 must be facing x.").tolerance == DEFAULT_DIRECTION_TOL
    assert AlignedGrippers((1, 2)).tolerance == DEFAULT_ALIGN_TOL
    assert Simultaneous((1, 2)).tolerance_ticks == DEFAULT_SIMULTANEOUS_TOL == 10


def test_whitespace_normalised():
    assert parse_constraint("Spatial", "  Avoid  collision between\nAgent_2 and other Agents ") == \
        CollisionAvoidance(2, "All")


@pytest.mark.parametrize("c,iface", [
    (ApproachDirection(1, "x", "Facing"), Interface.DIRECTION),
    (AlignedGrippers((1, 2)), Interface.DIRECTION),
    (ContactPoint(1, "x", "top"), Interface.INTERACTION),
    (CollisionAvoidance(1), Interface.SPATIAL),
    (KeepOut((1,), SphereRegion((0, 0, 0), 0.1)), Interface.SPATIAL),
    (Sequential((1, None), (2, None)), Interface.SCHEDULING),
    (Simultaneous((1, 2)), Interface.SCHEDULING),
    (TimeShareSpace((1, 2)), Interface.SCHEDULING),
])
def test_dispatch(c, iface):
    assert dispatch(c) == iface


@pytest.mark.parametrize("build", [
    lambda: ApproachDirection(0, "x", "Facing"),
    lambda: ApproachDirection(1, "x", "Facing", 0.0),
    lambda: ContactPoint(1, "x", "top", "kick"),
    lambda: AlignedGrippers((1,)),
    lambda: CollisionAvoidance(1, (1, 2)),
    lambda: KeepOut((1,)),
    lambda: SphereRegion((0, 0, 0), -1.0),
    lambda: Simultaneous((1, 2), 0),
    lambda: TimeShareSpace((3,)),
])
def test_invalid_values_rejected(build):
    with pytest.raises(ValueError):
        build()


def test_constraint_set_ordering_and_filter():
    s = parse_set({"Temporal": ["Agent_1 and Agent_2 could share the same space chronologically."],
                   "Logical": ["Agent_1 must grasp cube at its top point."],
                   "Spatial": ["Avoid collision between Agent_1 and other Agents."]})
    assert [type(c) for c in s.ordered()] == [ContactPoint, CollisionAvoidance, TimeShareSpace]
    assert len(s.filtered(spatial=False)) == 2
    assert parse_set(s.to_sentences()) == s
    with pytest.raises(ValueError):
        ConstraintSet(logical=(CollisionAvoidance(1),))
