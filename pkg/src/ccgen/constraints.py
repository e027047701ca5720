"""Typed constraints and the controlled-English sentences that describe them.

Every constraint renders to one canonical sentence and :func:`parse_constraint`
accepts that sentence plus a few documented alternative phrasings. The
grammar is closed: anything outside it raises :class:`ParseError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

from .errors import CategoryMismatch, ParseError

TICK_RATE = 20  # ticks per second
DEFAULT_DIRECTION_TOL = math.radians(15.0)
DEFAULT_ALIGN_TOL = 0.02  # m
DEFAULT_SIMULTANEOUS_TOL = int(0.5 * TICK_RATE)  # ticks


class Category(str, Enum):
    LOGICAL = "Logical"
    SPATIAL = "Spatial"
    TEMPORAL = "Temporal"


class Relation(str, Enum):
    PERPENDICULAR = "Perpendicular"
    PARALLEL = "Parallel"
    FACING = "Facing"


class Interface(str, Enum):
    DIRECTION = "ValidateDirection"
    INTERACTION = "ValidateInteraction"
    SPATIAL = "ValidateSpatialOccupancy"
    SCHEDULING = "ValidateScheduling"


def _positive(name: str, value) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be strictly positive, got {value!r}")


def _agents(ids) -> tuple[int, ...]:
    ids = tuple(int(a) for a in ids)
    if not ids:
        raise ValueError("a constraint must name at least one agent")
    if any(a < 1 for a in ids):
        raise ValueError(f"agent ids are positive, got {ids}")
    if len(set(ids)) != len(ids):
        raise ValueError(f"agent ids repeat in {ids}")
    return ids


@dataclass(frozen=True)
class ApproachDirection:
    agent_id: int
    object_id: str
    relation: Relation
    tolerance: float = DEFAULT_DIRECTION_TOL

    category = Category.LOGICAL

    def __post_init__(self):
        _agents([self.agent_id])
        object.__setattr__(self, "relation", Relation(self.relation))
        _positive("tolerance", self.tolerance)

    @property
    def agent_ids(self) -> tuple[int, ...]:
        return (self.agent_id,)


@dataclass(frozen=True)
class ContactPoint:
    agent_id: int
    object_id: str
    annotation_label: str
    verb: str = "grasp"

    category = Category.LOGICAL

    def __post_init__(self):
        _agents([self.agent_id])
        if self.verb not in _CONTACT_VERBS:
            raise ValueError(f"contact verb must be one of {_CONTACT_VERBS}")

    @property
    def agent_ids(self) -> tuple[int, ...]:
        return (self.agent_id,)


@dataclass(frozen=True)
class AlignedGrippers:
    agent_ids: tuple[int, ...]
    axis: str = "Height"
    tolerance: float = DEFAULT_ALIGN_TOL

    category = Category.LOGICAL

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", _agents(self.agent_ids))
        if len(self.agent_ids) < 2:
            raise ValueError("gripper alignment needs at least two agents")
        if self.axis != "Height":
            raise ValueError("only the Height axis is supported")
        _positive("tolerance", self.tolerance)


@dataclass(frozen=True)
class CollisionAvoidance:
    agent_id: int
    others: Union[str, tuple[int, ...]] = "All"

    category = Category.SPATIAL

    def __post_init__(self):
        _agents([self.agent_id])
        if self.others != "All":
            object.__setattr__(self, "others", _agents(self.others))
            if self.agent_id in self.others:
                raise ValueError("an agent cannot be listed among its own others")

    @property
    def agent_ids(self) -> tuple[int, ...]:
        if self.others == "All":
            return (self.agent_id,)
        return (self.agent_id,) + tuple(self.others)


@dataclass(frozen=True)
class BoxRegion:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3 or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box region needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class SphereRegion:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        _positive("radius", self.radius)


@dataclass(frozen=True)
class KeepOut:
    """Keep ``agent_ids`` out of ``region``. ``region=None`` refers to the
    task's designated area, reserved for ``reserved_for``."""

    agent_ids: tuple[int, ...]
    region: Union[BoxRegion, SphereRegion, None] = None
    reserved_for: tuple[int, ...] = ()

    category = Category.SPATIAL

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", _agents(self.agent_ids))
        object.__setattr__(self, "reserved_for", tuple(int(a) for a in self.reserved_for))
        if self.region is None and not self.reserved_for:
            raise ValueError("a designated-area keep-out names the agent the area is reserved for")


@dataclass(frozen=True)
class Sequential:
    before: tuple  # (agent_id, subgoal_id or None)
    after: tuple

    category = Category.TEMPORAL

    def __post_init__(self):
        for name in ("before", "after"):
            a, g = getattr(self, name)
            _agents([a])
            object.__setattr__(self, name, (int(a), g if g else None))

    @property
    def agent_ids(self) -> tuple[int, ...]:
        return (self.before[0], self.after[0])


@dataclass(frozen=True)
class Simultaneous:
    agent_ids: tuple[int, ...]
    tolerance_ticks: int = DEFAULT_SIMULTANEOUS_TOL

    category = Category.TEMPORAL

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", _agents(self.agent_ids))
        if len(self.agent_ids) < 2:
            raise ValueError("simultaneity needs at least two agents")
        if int(self.tolerance_ticks) != self.tolerance_ticks:
            raise ValueError("tolerance_ticks must be an integer")
        object.__setattr__(self, "tolerance_ticks", int(self.tolerance_ticks))
        _positive("tolerance_ticks", self.tolerance_ticks)


@dataclass(frozen=True)
class TimeShareSpace:
    agent_ids: tuple[int, ...]

    category = Category.TEMPORAL

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", _agents(self.agent_ids))
        if len(self.agent_ids) < 2:
            raise ValueError("space sharing needs at least two agents")


Constraint = Union[ApproachDirection, ContactPoint, AlignedGrippers, CollisionAvoidance, KeepOut,
                   Sequential, Simultaneous, TimeShareSpace]
CONSTRAINT_TYPES = (ApproachDirection, ContactPoint, AlignedGrippers, CollisionAvoidance, KeepOut,
                    Sequential, Simultaneous, TimeShareSpace)

_DISPATCH = {
    ApproachDirection: Interface.DIRECTION,
    AlignedGrippers: Interface.DIRECTION,
    ContactPoint: Interface.INTERACTION,
    CollisionAvoidance: Interface.SPATIAL,
    KeepOut: Interface.SPATIAL,
    Sequential: Interface.SCHEDULING,
    Simultaneous: Interface.SCHEDULING,
    TimeShareSpace: Interface.SCHEDULING,
}


def dispatch(constraint: Constraint) -> Interface:
    """Validation interface responsible for ``constraint``."""
    return _DISPATCH[type(constraint)]


@dataclass(frozen=True)
class ConstraintSet:
    logical: tuple = ()
    spatial: tuple = ()
    temporal: tuple = ()

    def __post_init__(self):
        for cat, name in ((Category.LOGICAL, "logical"), (Category.SPATIAL, "spatial"),
                          (Category.TEMPORAL, "temporal")):
            items = tuple(getattr(self, name))
            for c in items:
                if c.category != cat:
                    raise ValueError(f"{type(c).__name__} does not belong in the {name} list")
            object.__setattr__(self, name, items)

    @classmethod
    def of(cls, constraints) -> "ConstraintSet":
        parts = {Category.LOGICAL: [], Category.SPATIAL: [], Category.TEMPORAL: []}
        for c in constraints:
            parts[c.category].append(c)
        return cls(tuple(parts[Category.LOGICAL]), tuple(parts[Category.SPATIAL]),
                   tuple(parts[Category.TEMPORAL]))

    def ordered(self) -> list:
        """Check order: logical, spatial, temporal; declaration order within each."""
        return [*self.logical, *self.spatial, *self.temporal]

    def filtered(self, logical: bool = True, spatial: bool = True, temporal: bool = True) -> "ConstraintSet":
        return ConstraintSet(self.logical if logical else (), self.spatial if spatial else (),
                             self.temporal if temporal else ())

    def __len__(self) -> int:
        return len(self.logical) + len(self.spatial) + len(self.temporal)

    def to_sentences(self) -> dict:
        return {"Logical": [render(c) for c in self.logical],
                "Spatial": [render(c) for c in self.spatial],
                "Temporal": [render(c) for c in self.temporal]}


# ---------------------------------------------------------------------------
# grammar

_CONTACT_VERBS = ("grasp", "press", "touch")
_AGENT = r"Agent_(?P<{}>[1-9][0-9]*)"
_IDENT = r"\{?[A-Za-z][A-Za-z0-9_]*\}?"
_NUM = r"[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?"
_LIST = r"(?P<{}>Agent_[1-9][0-9]*(?:(?:, | and |, and )Agent_[1-9][0-9]*)*)"
_POINT = r"\((?P<{0}x>{1}), (?P<{0}y>{1}), (?P<{0}z>{1})\)"


def _agent_list(text: str) -> tuple[int, ...]:
    return tuple(int(m) for m in re.findall(r"Agent_([1-9][0-9]*)", text))


def _fmt_agents(ids) -> str:
    names = [f"Agent_{a}" for a in ids]
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _num(x: float) -> str:
    return repr(float(x))


def _point(g, prefix: str) -> tuple[float, float, float]:
    return tuple(float(g[prefix + c]) for c in "xyz")


def _fmt_point(p) -> str:
    return "(" + ", ".join(_num(v) for v in p) + ")"


def _angle(g) -> float:
    if g.get("tol") is None:
        return DEFAULT_DIRECTION_TOL
    v = float(g["tol"])
    return math.radians(v) if g.get("unit", "rad").startswith("deg") else v


_RELATION_WORDS = {
    "perpendicular to": Relation.PERPENDICULAR,
    "parallel to": Relation.PARALLEL,
    "facing": Relation.FACING,
}


@dataclass(frozen=True)
class Template:
    name: str
    category: Category
    pattern: str
    build: Callable
    canonical: bool = True
    example: str = ""
    regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "regex", re.compile(self.pattern + r"\.?"))


def _build_direction(g):
    rel = _RELATION_WORDS[g["rel"]]
    return ApproachDirection(int(g["a"]), g["obj"], rel, _angle(g))


def _build_keepout_box(g):
    return KeepOut(_agent_list(g["agents"]), BoxRegion(_point(g, "p"), _point(g, "q")))


def _build_keepout_sphere(g):
    return KeepOut(_agent_list(g["agents"]), SphereRegion(_point(g, "p"), float(g["r"])))


def _build_collision_list(g):
    return CollisionAvoidance(int(g["a"]), _agent_list(g["others"]))


_TOL_DEG = r"(?: within (?P<tol>{n}) (?P<unit>rad|degrees|deg))?".format(n=_NUM)
_TOL_M = r"(?: within (?P<tol>{n}) m)?".format(n=_NUM)
_TOL_TICKS = r"(?: within (?P<tol>[1-9][0-9]*) ticks)?"
_REL = r"(?P<rel>perpendicular to|parallel to|facing)"
_WHEN = r"(?: when [a-z]+ing)?"
_PURPOSE = r"(?: to [^.]+)?"

TEMPLATES: tuple[Template, ...] = (
    Template("approach_direction", Category.LOGICAL,
             r"The gripper of " + _AGENT.format("a") + r" must be " + _REL + " (?P<obj>" + _IDENT + ")"
             + _TOL_DEG + _WHEN,
             _build_direction, example="The gripper of Agent_1 must be perpendicular to Object_A."),
    Template("approach_direction_is", Category.LOGICAL,
             r"The gripper of " + _AGENT.format("a") + r" is " + _REL + " (?P<obj>" + _IDENT + ")"
             + _TOL_DEG + _WHEN,
             _build_direction, canonical=False,
             example="The gripper of Agent_1 is perpendicular to {Object}."),
    Template("contact_point", Category.LOGICAL,
             _AGENT.format("a") + r" must (?P<verb>grasp|press|touch) (?P<obj>" + _IDENT
             + r") at its (?P<label>[A-Za-z][A-Za-z0-9_]*) point",
             lambda g: ContactPoint(int(g["a"]), g["obj"], g["label"], g["verb"]),
             example="Agent_3 must grasp Object_B at its left point."),
    Template("aligned_grippers", Category.LOGICAL,
             _LIST.format("agents") + r" must maintain a consistent gripper height" + _TOL_M,
             lambda g: AlignedGrippers(_agent_list(g["agents"]), "Height",
                                       float(g["tol"]) if g.get("tol") else DEFAULT_ALIGN_TOL),
             example="Agent_1 and Agent_2 must maintain a consistent gripper height."),
    Template("aligned_grippers_keep", Category.LOGICAL,
             r"Keep the gripper height consistent between " + _LIST.format("agents") + _TOL_M + _PURPOSE,
             lambda g: AlignedGrippers(_agent_list(g["agents"]), "Height",
                                       float(g["tol"]) if g.get("tol") else DEFAULT_ALIGN_TOL),
             canonical=False,
             example="Keep the gripper height consistent between Agent_2 and Agent_3 to make the camera"
                     " remain horizontal."),
    Template("collision_all", Category.SPATIAL,
             r"Avoid collision between " + _AGENT.format("a") + r" and other Agents",
             lambda g: CollisionAvoidance(int(g["a"]), "All"),
             example="Avoid collision between Agent_2 and other Agents."),
    Template("collision_list", Category.SPATIAL,
             r"Avoid collision between " + _AGENT.format("a") + r" and " + _LIST.format("others"),
             _build_collision_list, example="Avoid collision between Agent_2 and Agent_3."),
    Template("collision_trajectories", Category.SPATIAL,
             _AGENT.format("a") + r" must not intersect with the trajectories of other agents",
             lambda g: CollisionAvoidance(int(g["a"]), "All"), canonical=False,
             example="Agent_2 must not intersect with the trajectories of other agents."),
    Template("keepout_designated", Category.SPATIAL,
             _LIST.format("agents") + r" should not occupy the same space as " + _LIST.format("owners")
             + r" in the designated area",
             lambda g: KeepOut(_agent_list(g["agents"]), None, _agent_list(g["owners"])),
             example="Agent_1 should not occupy the same space as Agent_3 in the designated area."),
    Template("keepout_box", Category.SPATIAL,
             _LIST.format("agents") + r" must stay out of the box from " + _POINT.format("p", _NUM)
             + r" to " + _POINT.format("q", _NUM),
             _build_keepout_box,
             example="Agent_1 must stay out of the box from (0.0, 0.0, 0.0) to (0.1, 0.1, 0.1)."),
    Template("keepout_sphere", Category.SPATIAL,
             _LIST.format("agents") + r" must stay out of the sphere at " + _POINT.format("p", _NUM)
             + r" with radius (?P<r>" + _NUM + ")",
             _build_keepout_sphere,
             example="Agent_1 must stay out of the sphere at (0.0, 0.0, 0.3) with radius 0.1."),
    Template("sequential", Category.TEMPORAL,
             _AGENT.format("b") + r" must complete (?:the task|subgoal (?P<gb>[A-Za-z0-9_]+)) before "
             + _AGENT.format("a") + r" can begin (?:their action|subgoal (?P<ga>[A-Za-z0-9_]+))",
             lambda g: Sequential((int(g["b"]), g.get("gb")), (int(g["a"]), g.get("ga"))),
             example="Agent_2 must complete the task before Agent_4 can begin their action."),
    Template("sequential_only_after", Category.TEMPORAL,
             _AGENT.format("a") + r" must [a-z][^.]*? only after " + _AGENT.format("b") + r" [a-z][^.]*",
             lambda g: Sequential((int(g["b"]), None), (int(g["a"]), None)), canonical=False,
             example="Agent_4 must place Object_C only after Agent_5 opens the container."),
    Template("simultaneous", Category.TEMPORAL,
             _LIST.format("agents") + r" perform tasks simultaneously" + _TOL_TICKS + r" without interference",
             lambda g: Simultaneous(_agent_list(g["agents"]),
                                    int(g["tol"]) if g.get("tol") else DEFAULT_SIMULTANEOUS_TOL),
             example="Agent_1 and Agent_3 perform tasks simultaneously without interference."),
    Template("time_share_space", Category.TEMPORAL,
             _LIST.format("agents") + r" could share the same space chronologically",
             lambda g: TimeShareSpace(_agent_list(g["agents"])),
             example="Agent_2 and Agent_4 could share the same space chronologically."),
)


def _normalize(sentence: str) -> str:
    return re.sub(r"\s+", " ", sentence.strip())


def parse_constraint(category, sentence: str) -> Constraint:
    """Parse one sentence into a typed constraint of the given category."""
    category = Category(category)
    if not isinstance(sentence, str) or not sentence.strip():
        raise ParseError(sentence or "", (0, 0), [t.name for t in TEMPLATES])
    text = _normalize(sentence)
    for t in TEMPLATES:
        m = t.regex.fullmatch(text)
        if m is None:
            continue
        try:
            c = t.build(m.groupdict())
        except ValueError as exc:
            raise ParseError(text, (0, len(text)), [t.name], str(exc)) from None
        if c.category != category:
            raise CategoryMismatch(f"{text!r} is a {c.category.value} constraint, not {category.value}")
        return c
    raise ParseError(text, _first_mismatch(text), [t.name for t in TEMPLATES])


def _first_mismatch(text: str) -> tuple[int, int]:
    """Span from the end of the longest matching template prefix to the end."""
    best = 0
    for t in TEMPLATES:
        lit = re.split(r"[\\(\[]", t.pattern, maxsplit=1)[0]
        n = 0
        while n < min(len(lit), len(text)) and lit[n] == text[n]:
            n += 1
        best = max(best, n)
    return best, len(text)


def _fmt_tol_angle(tol: float) -> str:
    return "" if tol == DEFAULT_DIRECTION_TOL else f" within {_num(tol)} rad"


def _fmt_tol_m(tol: float) -> str:
    return "" if tol == DEFAULT_ALIGN_TOL else f" within {_num(tol)} m"


def _fmt_region(region) -> str:
    if isinstance(region, BoxRegion):
        return f"the box from {_fmt_point(region.lower)} to {_fmt_point(region.upper)}"
    return f"the sphere at {_fmt_point(region.center)} with radius {_num(region.radius)}"


def render(c: Constraint) -> str:
    """Canonical sentence for ``c``; parsing it gives back ``c``."""
    if isinstance(c, ApproachDirection):
        word = {v: k for k, v in _RELATION_WORDS.items()}[c.relation]
        return f"The gripper of Agent_{c.agent_id} must be {word} {c.object_id}{_fmt_tol_angle(c.tolerance)}."
    if isinstance(c, ContactPoint):
        return f"Agent_{c.agent_id} must {c.verb} {c.object_id} at its {c.annotation_label} point."
    if isinstance(c, AlignedGrippers):
        return f"{_fmt_agents(c.agent_ids)} must maintain a consistent gripper height{_fmt_tol_m(c.tolerance)}."
    if isinstance(c, CollisionAvoidance):
        if c.others == "All":
            return f"Avoid collision between Agent_{c.agent_id} and other Agents."
        return f"Avoid collision between Agent_{c.agent_id} and {_fmt_agents(c.others)}."
    if isinstance(c, KeepOut):
        if c.region is None:
            return (f"{_fmt_agents(c.agent_ids)} should not occupy the same space as "
                    f"{_fmt_agents(c.reserved_for)} in the designated area.")
        return f"{_fmt_agents(c.agent_ids)} must stay out of {_fmt_region(c.region)}."
    if isinstance(c, Sequential):
        (b, gb), (a, ga) = c.before, c.after
        first = f"subgoal {gb}" if gb else "the task"
        second = f"subgoal {ga}" if ga else "their action"
        return f"Agent_{b} must complete {first} before Agent_{a} can begin {second}."
    if isinstance(c, Simultaneous):
        tol = "" if c.tolerance_ticks == DEFAULT_SIMULTANEOUS_TOL else f" within {c.tolerance_ticks} ticks"
        return f"{_fmt_agents(c.agent_ids)} perform tasks simultaneously{tol} without interference."
    if isinstance(c, TimeShareSpace):
        return f"{_fmt_agents(c.agent_ids)} could share the same space chronologically."
    raise TypeError(f"not a constraint: {c!r}")


def parse_set(sentences: dict) -> ConstraintSet:
    """``{"Logical": [...], "Spatial": [...], "Temporal": [...]}`` to a set."""
    parts = {}
    for cat in Category:
        parts[cat] = tuple(parse_constraint(cat, s) for s in sentences.get(cat.value, []) or [])
    return ConstraintSet(parts[Category.LOGICAL], parts[Category.SPATIAL], parts[Category.TEMPORAL])
