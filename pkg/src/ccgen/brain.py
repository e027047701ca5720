"""Subgoal and constraint generation.

Two planners share one interface, ``next_plan(observation, instruction,
previous, feedback) -> PlanStep``:

* :class:`ScriptedPlanner` walks a task's phase table. When a phase is
  drafted it may, with the probabilities listed in the task file, introduce
  one scheduling or geometry defect (a "variant"). Violations reported by the
  checker are answered with a repair: first by removing a defect that the
  violated constraint type detects, otherwise by a generic tactic. At most
  ``REPAIR_BUDGET`` repairs are made per phase.
* :class:`RemoteClient` posts a structured request to an HTTP endpoint and
  parses the JSON answer with :func:`parse_remote_plan`.

Subgoal sentences in the JSON schema are grounded with a fixed phrase table;
see ``docs/remote_schema.md``.
"""

from __future__ import annotations

import dataclasses
import json
import re
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass, field

import numpy as np

from .constraints import (AlignedGrippers, ApproachDirection, Category, CollisionAvoidance, ConstraintSet,
                          ContactPoint, KeepOut, Sequential, Simultaneous, TimeShareSpace, parse_constraint,
                          parse_set, render)
from .errors import CategoryMismatch, ParseError, PlannerExhausted, RemoteError, SchemaError
from .primitives import SKILLS, Skill, check_skill
from .tasks import TaskSpec, lookup, resolve_axis

REPAIR_BUDGET = 3
SUCCESS = "SubgoalSuccess"
VIOLATION = "Violation"


# ---------------------------------------------------------------------------
# types

def subgoal_id(agent_ids) -> str:
    return "g" + "_".join(str(a) for a in sorted(agent_ids))


@dataclass(frozen=True)
class Subgoal:
    """One unit of work for one or more agents.

    ``start_after`` lists subgoal ids of the same plan step that must finish
    first and ``delay`` adds idle ticks before the start. ``skill`` is ``None``
    only for a placeholder sentence received from a remote planner, whose
    text is then kept in ``text``.
    """

    id: str
    agent_ids: tuple[int, ...]
    skill: Skill | None
    start_after: tuple[str, ...] = ()
    delay: int = 0
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", tuple(sorted(int(a) for a in self.agent_ids)))
        object.__setattr__(self, "start_after", tuple(sorted(self.start_after)))
        if not self.agent_ids:
            raise ValueError("a subgoal needs at least one agent")
        if len(set(self.agent_ids)) != len(self.agent_ids):
            raise ValueError(f"repeated agent in {self.agent_ids}")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        if self.skill is not None:
            check_skill(self.skill)
        elif not self.text:
            raise ValueError("an ungrounded subgoal must keep its text")

    @property
    def grounded(self) -> bool:
        return self.skill is not None

    def to_dict(self) -> dict:
        return {"id": self.id, "agent_ids": list(self.agent_ids),
                "skill": self.skill.to_dict() if self.skill else None,
                "start_after": list(self.start_after), "delay": self.delay, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Subgoal":
        skill = Skill.from_dict(d["skill"]) if d.get("skill") else None
        return cls(d["id"], tuple(d["agent_ids"]), skill, tuple(d.get("start_after", ())),
                   int(d.get("delay", 0)), d.get("text", ""))


@dataclass(frozen=True)
class Feedback:
    outcome: str
    reason: str = ""

    def __post_init__(self):
        if self.outcome not in (SUCCESS, VIOLATION):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome == VIOLATION and not self.reason:
            raise ValueError("a violation needs its reason")

    @classmethod
    def success(cls) -> "Feedback":
        return cls(SUCCESS)

    @classmethod
    def violation(cls, reason: str) -> "Feedback":
        return cls(VIOLATION, reason)


@dataclass(frozen=True)
class PlanStep:
    subgoals: tuple[Subgoal, ...] = ()
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    done: bool = False

    def __post_init__(self):
        subs = tuple(sorted(self.subgoals, key=lambda s: s.agent_ids))
        object.__setattr__(self, "subgoals", subs)
        used = [a for s in subs for a in s.agent_ids]
        if len(used) != len(set(used)):
            raise ValueError("an agent appears in two subgoals of one step")
        ids = {s.id for s in subs}
        for s in subs:
            missing = set(s.start_after) - ids
            if missing:
                raise ValueError(f"{s.id} waits for unknown subgoal(s) {sorted(missing)}")
        if self.done and subs:
            raise ValueError("a finished plan has no subgoals")

    def agent_ids(self) -> set[int]:
        out = {a for s in self.subgoals for a in s.agent_ids}
        for c in self.constraints.ordered():
            out.update(c.agent_ids)
            if isinstance(c, KeepOut):
                out.update(c.reserved_for)
        return out

    def to_dict(self) -> dict:
        return {"subgoals": [s.to_dict() for s in self.subgoals],
                "constraints": self.constraints.to_sentences(), "done": self.done}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        return cls(tuple(Subgoal.from_dict(s) for s in d["subgoals"]), parse_set(d["constraints"]),
                   bool(d["done"]))


DONE = PlanStep(done=True)


# ---------------------------------------------------------------------------
# phrase table

_NUM = r"[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?"
_ID = r"[A-Za-z][A-Za-z0-9_]*"
_VEC = r"\(({n}), ({n}), ({n})\)".format(n=_NUM)
_AGENTS = r"Agent_[1-9][0-9]*(?:(?:, | and |, and )Agent_[1-9][0-9]*)*"

# skill -> list of (body pattern, body template); bodies of one skill are
# tried in order and must be mutually exclusive
_BODIES = {
    "grasp": [(r"grasp (?P<object>{id}) at its (?P<label>{id}) point", "grasp {object} at its {label} point")],
    "pick": [(r"pick up (?P<object>{id}) at its (?P<label>{id}) point and lift it by (?P<height>{n}) m"
              r"(?:, then move it by (?P<delta>{v}))?",
              "pick up {object} at its {label} point and lift it by {height} m")],
    "transfer": [(r"pick up (?P<object>{id}) at its (?P<label>{id}) point, lift it by (?P<height>{n}) m"
                  r" and place it at (?P<position>{v})",
                  "pick up {object} at its {label} point, lift it by {height} m and place it at {position}")],
    "press": [(r"press (?P<object>{id}) at its (?P<label>{id}) point(?: and back off (?P<retreat>{n}) m)?",
               "press {object} at its {label} point")],
    "hover": [(r"move above (?P<object>{id}) at its (?P<label>{id}) point", "move above {object} at its {label} point")],
    "lift": [(r"lift the held object by (?P<height>{n}) m", "lift the held object by {height} m")],
    "carry": [(r"move the held object by (?P<delta>{v})", "move the held object by {delta}"),
              (r"move the held object to (?P<position>{v})", "move the held object to {position}"),
              (r"move the (?P<anchor>{id}) point of the held object to (?P<position>{v})",
               "move the {anchor} point of the held object to {position}")],
    "place": [(r"place the held object at (?P<position>{v})", "place the held object at {position}")],
    "release": [(r"release the held object", "release the held object")],
    "home": [(r"return home", "return home")],
    "wait": [(r"wait (?P<ticks>[0-9]+) ticks", "wait {ticks} ticks")],
}
_RETRACT = r"(?P<retract> and return home)?"
_STANDOFF = r"(?: with extra standoff (?P<standoff_shift>{n}) m)?".format(n=_NUM)
_TOGETHER = r"(?: together with (?P<together>{a}))?".format(a=_AGENTS)
_PREFIX = (r"(?:After (?P<deps>{a} finish(?:es)?(?: and after {a} finish(?:es)?)*), )?"
           r"(?:wait (?P<delay>[0-9]+) ticks, then )?").format(a=_AGENTS)

_PHRASES = []
for _name, _forms in _BODIES.items():
    for _pat, _tpl in _forms:
        _body = _pat.format(id=_ID, n=_NUM, v=_VEC)
        _PHRASES.append((_name, _tpl, re.compile(_PREFIX + _body + _RETRACT + _STANDOFF + _TOGETHER + r"\.?")))

_FLOAT_PARAMS = {"height", "retreat", "standoff_shift"}
_VEC_PARAMS = {"delta", "position"}


def _num(x) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return "(" + ", ".join(_num(x) for x in v) + ")"


def _agents_text(ids) -> str:
    names = [f"Agent_{a}" for a in ids]
    return names[0] if len(names) == 1 else ", ".join(names[:-1]) + " and " + names[-1]


def _agent_numbers(text: str) -> list[int]:
    return [int(x) for x in re.findall(r"Agent_([1-9][0-9]*)", text)]


def render_subgoal(sub: Subgoal, speaker: int | None = None, groups: dict | None = None) -> str:
    """Sentence for ``sub`` as said by agent ``speaker``.

    ``groups`` maps subgoal ids to agent tuples so dependencies can be named
    by their agents.
    """
    if sub.skill is None:
        return sub.text
    skill = sub.skill
    speaker = sub.agent_ids[0] if speaker is None else speaker
    values = {k: (_vec(v) if k in _VEC_PARAMS else _num(v) if k in _FLOAT_PARAMS else v) for k, v in skill.params}
    if skill.name == "carry":
        tpl = _BODIES["carry"][0 if skill.param("delta") is not None else 2 if skill.param("anchor") else 1][1]
    else:
        tpl = _BODIES[skill.name][0][1]
    text = tpl.format(**values)
    if skill.name == "pick" and skill.param("delta") is not None:
        text += f", then move it by {values['delta']}"
    if skill.name == "press" and skill.param("retreat") is not None:
        text += f" and back off {values['retreat']} m"
    if skill.param("retract"):
        text += " and return home"
    if skill.param("standoff_shift") is not None:
        text += f" with extra standoff {values['standoff_shift']} m"
    others = [a for a in sub.agent_ids if a != speaker]
    if others:
        text += " together with " + _agents_text(others)
    prefix = ""
    if sub.start_after:
        groups = groups or {}
        parts = []
        for dep in sub.start_after:
            ids = groups.get(dep) or tuple(int(x) for x in dep[1:].split("_"))
            parts.append(_agents_text(ids) + (" finishes" if len(ids) == 1 else " finish"))
        prefix = "After " + " and after ".join(parts) + ", "
    if sub.delay:
        prefix += f"wait {sub.delay} ticks, then "
    text = prefix + text
    return text[0].upper() + text[1:] + "."


def parse_subgoal(sentence: str, speaker: int) -> Subgoal:
    """Ground one subgoal sentence spoken by ``speaker``; SchemaError if no phrase fits."""
    text = re.sub(r"\s+", " ", sentence.strip())
    if text and not text.startswith("After "):
        text = text[0].lower() + text[1:]
    for name, _, rx in _PHRASES:
        m = rx.fullmatch(text)
        if m is None:
            continue
        g = m.groupdict()
        params = {}
        required, optional = SKILLS[name]
        for key in required + optional:
            raw = g.get(key)
            if raw is None:
                continue
            if key in _VEC_PARAMS:
                params[key] = tuple(float(x) for x in re.findall(_NUM, raw))
            elif key in _FLOAT_PARAMS:
                params[key] = float(raw)
            elif key == "ticks":
                params[key] = int(raw)
            elif key == "retract":
                params[key] = True
            else:
                params[key] = raw
        agents = {speaker, *(_agent_numbers(g["together"]) if g.get("together") else [])}
        deps = ()
        if g.get("deps"):
            deps = tuple(subgoal_id(_agent_numbers(part)) for part in g["deps"].split(" and after "))
        try:
            return Subgoal(subgoal_id(agents), tuple(agents), Skill.make(name, **params), deps,
                           int(g["delay"] or 0))
        except ValueError as exc:
            raise SchemaError(f"subgoal {sentence!r}: {exc}") from None
    raise SchemaError(f"no skill phrase matches subgoal {sentence!r}")


# ---------------------------------------------------------------------------
# JSON documents

_CATEGORY_ORDER = (Category.LOGICAL, Category.TEMPORAL, Category.SPATIAL)
_PLACEHOLDER = re.compile(r"\{[^{}]*\}\.?")


def _constraint_entry(c) -> dict:
    ids = sorted(set(_agent_numbers(render(c))))
    if len(ids) == 1:
        return {"Agent": f"Agent_{ids[0]}", "Constraint": render(c)}
    return {"Agents": [f"Agent_{a}" for a in ids], "Constraint": render(c)}


def plan_document(step: PlanStep) -> dict:
    groups = {s.id: s.agent_ids for s in step.subgoals}
    subgoals = {}
    for s in step.subgoals:
        for a in s.agent_ids:
            subgoals[a] = render_subgoal(s, a, groups)
    cons = {cat.value: [_constraint_entry(c) for c in getattr(step.constraints, cat.value.lower())]
            for cat in _CATEGORY_ORDER}
    return {"Subgoals": {f"Agent_{a}": subgoals[a] for a in sorted(subgoals)}, "Constraints": cons}


def render_plan(step: PlanStep) -> str:
    """The JSON document a remote planner would answer with for ``step``."""
    return json.dumps(plan_document(step), indent=2)


def repair_json(text: str) -> str:
    """Fix the slips language models commonly make in otherwise valid JSON.

    Drops elision lines (``...``), adds a missing opening quote in front of
    a bare string value and removes trailing commas. Anything else is left
    for the JSON decoder to reject.
    """
    text = re.sub(r"^\s*```[a-zA-Z]*\s*$", "", text.strip(), flags=re.M)
    lines = []
    for line in text.splitlines():
        if re.fullmatch(r"\s*(?:\.\.\.|…),?\s*", line):
            continue
        line = re.sub(r'^(\s*"[^"]+"\s*:\s*)(?=[A-Za-z][^"]*"\s*,?\s*$)', r'\1"', line)
        lines.append(line)
    return re.sub(r",(\s*[}\]])", r"\1", "\n".join(lines))


def _agent_key(key) -> int:
    if not isinstance(key, str) or not re.fullmatch(r"Agent_[1-9][0-9]*", key):
        raise SchemaError(f"bad agent key {key!r}")
    return int(key[6:])


def _parse_subgoals(block) -> tuple[Subgoal, ...]:
    if not isinstance(block, dict):
        raise SchemaError('"Subgoals" must map agent names to sentences')
    found: dict[str, Subgoal] = {}
    stated: dict[str, set] = {}
    for key, sentence in block.items():
        a = _agent_key(key)
        if not isinstance(sentence, str):
            raise SchemaError(f"subgoal of {key} must be a sentence")
        if _PLACEHOLDER.fullmatch(sentence.strip()):
            sub = Subgoal(subgoal_id([a]), (a,), None, text=sentence)
        else:
            sub = parse_subgoal(sentence, a)
        prior = found.get(sub.id)
        if prior is not None and prior != sub:
            raise SchemaError(f"agents of {sub.id} describe different subgoals")
        found[sub.id] = sub
        stated.setdefault(sub.id, set()).add(a)
    for sid, sub in found.items():
        if stated[sid] != set(sub.agent_ids):
            raise SchemaError(f"{sid} is missing the sentence of agent(s) "
                              f"{sorted(set(sub.agent_ids) - stated[sid])}")
    return tuple(found.values())


def _parse_constraints(block) -> ConstraintSet:
    if not isinstance(block, dict):
        raise SchemaError('"Constraints" must be an object')
    names = {c.value for c in Category}
    unknown = sorted(set(block) - names)
    if unknown:
        raise SchemaError(f"unknown constraint category {unknown}")
    parsed = {c: [] for c in Category}
    for cat in Category:
        entries = block.get(cat.value, [])
        if not isinstance(entries, list):
            raise SchemaError(f'"{cat.value}" must be a list')
        for e in entries:
            if not isinstance(e, dict) or not isinstance(e.get("Constraint"), str):
                raise SchemaError(f'every "{cat.value}" entry needs a "Constraint" sentence')
            extra = sorted(set(e) - {"Agent", "Agents", "Constraint"})
            if extra or ("Agent" in e) == ("Agents" in e):
                raise SchemaError(f'entry {e!r} needs exactly one of "Agent" and "Agents"')
            keyed = [e["Agent"]] if "Agent" in e else e["Agents"]
            if not isinstance(keyed, list) or not keyed:
                raise SchemaError(f'"Agents" of {e!r} must be a non-empty list')
            keyed_ids = {_agent_key(k) for k in keyed}
            sentence = e["Constraint"]
            c = parse_constraint(cat, sentence)
            if keyed_ids != set(_agent_numbers(sentence)):
                raise SchemaError(f"entry agents {sorted(keyed_ids)} do not match the sentence {sentence!r}")
            parsed[cat].append(c)
    return ConstraintSet(tuple(parsed[Category.LOGICAL]), tuple(parsed[Category.SPATIAL]),
                         tuple(parsed[Category.TEMPORAL]))


def parse_remote_plan(document: str) -> PlanStep:
    """Parse a planner answer shaped like ``{"Subgoals": ..., "Constraints": ...}``.

    Raises SchemaError for structural problems, ParseError or
    CategoryMismatch for constraint sentences that do not fit.
    """
    if not isinstance(document, str):
        raise SchemaError("plan document must be text")
    try:
        doc = json.loads(repair_json(document))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"plan document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("plan document must be a JSON object")
    missing = [k for k in ("Subgoals", "Constraints") if k not in doc]
    if missing:
        raise SchemaError(f"plan document lacks {missing}")
    extra = sorted(set(doc) - {"Subgoals", "Constraints"})
    if extra:
        raise SchemaError(f"unexpected top-level key(s) {extra}")
    subgoals = _parse_subgoals(doc["Subgoals"])
    constraints = _parse_constraints(doc["Constraints"])
    try:
        return PlanStep(subgoals, constraints, done=not subgoals)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


# ---------------------------------------------------------------------------
# violation reasons

_REASON = re.compile(r"(?P<kind>\w+): agent\(s\) (?P<ids>[0-9]+(?:, [0-9]+)*) violated '(?P<sentence>.*)' "
                     r"at tick (?P<tick>[0-9]+): (?P<detail>.*)", re.S)


@dataclass(frozen=True)
class ParsedReason:
    interface: str
    agents: tuple[int, ...]
    constraint: object | None
    tick: int
    detail: str


def parse_reason(reason: str) -> ParsedReason | None:
    m = _REASON.fullmatch(reason.strip())
    if m is None:
        return None
    constraint = None
    for cat in Category:
        try:
            constraint = parse_constraint(cat, m["sentence"])
            break
        except (ParseError, CategoryMismatch):
            continue
    return ParsedReason(m["kind"], tuple(int(x) for x in m["ids"].split(", ")), constraint,
                        int(m["tick"]), m["detail"])


# ---------------------------------------------------------------------------
# scripted planner

DETECTED_BY = {
    "serialize": (TimeShareSpace,),
    "parallelize": (Sequential,),
    "stagger": (Simultaneous,),
    "split": (Simultaneous, AlignedGrippers),
    "swap": (CollisionAvoidance, ContactPoint, KeepOut),
    "relabel": (ContactPoint, ApproachDirection),
    "no_retract": (CollisionAvoidance, KeepOut),
    "intrude": (CollisionAvoidance, KeepOut),
}


@dataclass(frozen=True)
class Defect:
    kind: str
    params: dict
    agents: frozenset


def planner_rng(task_id: str, seed: int) -> np.random.Generator:
    # a stream separate from the one that lays out the scene
    return np.random.default_rng([int(seed), zlib.crc32(task_id.encode()), 1])


def _resolve_params(params: dict, scene) -> dict:
    out = {}
    for k, v in params.items():
        if v is None or v is False:
            continue
        if k in _VEC_PARAMS:
            out[k] = tuple(resolve_axis(x, scene) for x in v)
        elif k in _FLOAT_PARAMS:
            out[k] = float(v)
        elif k == "ticks":
            out[k] = int(v)
        else:
            out[k] = v
    return out


def _with_skill(sub: Subgoal, **changes) -> Subgoal:
    params = dict(sub.skill.params)
    for k, v in changes.items():
        if v is None:
            params.pop(k, None)
        else:
            params[k] = v
    return dataclasses.replace(sub, skill=Skill.make(sub.skill.name, **params))


def _holding(subs, agent: int):
    for i, s in enumerate(subs):
        if agent in s.agent_ids:
            return i
    return None


def _depends(subs, a_id: str, b_id: str) -> bool:
    """True when subgoal ``a_id`` (transitively) waits for ``b_id``."""
    by_id = {s.id: s for s in subs}
    stack, seen = [a_id], set()
    while stack:
        cur = stack.pop()
        if cur == b_id:
            return True
        if cur in seen or cur not in by_id:
            continue
        seen.add(cur)
        stack.extend(by_id[cur].start_after)
    return False


def apply_defect(d: Defect, subs: list[Subgoal]) -> list[Subgoal]:
    subs = list(subs)
    k, p = d.kind, d.params
    if k == "serialize":
        chain = _serial_chain(p, subs)
        for prev, cur in zip(chain, chain[1:]):
            subs[cur] = dataclasses.replace(subs[cur], start_after=(subs[prev].id,))
        return subs
    if k == "parallelize":
        return [dataclasses.replace(s, start_after=()) for s in subs]
    if k == "stagger":
        i = _holding(subs, int(p["agent"]))
        subs[i] = dataclasses.replace(subs[i], delay=subs[i].delay + int(p["ticks"]))
        return subs
    if k == "split":
        out = []
        for s in subs:
            if len(s.agent_ids) < 2:
                out.append(s)
                continue
            prev = None
            for a in s.agent_ids:
                piece = Subgoal(subgoal_id([a]), (a,), s.skill, (prev,) if prev else s.start_after, s.delay)
                out.append(piece)
                prev = piece.id
        return out
    if k == "swap":
        a, b = (int(x) for x in p["agents"])
        i, j = _holding(subs, a), _holding(subs, b)
        subs[i], subs[j] = (dataclasses.replace(subs[i], skill=subs[j].skill),
                            dataclasses.replace(subs[j], skill=subs[i].skill))
        return subs
    if k == "relabel":
        i = _holding(subs, int(p["agent"]))
        subs[i] = _with_skill(subs[i], label=p.get("label"), standoff_shift=p.get("standoff_shift"))
        return subs
    if k == "no_retract":
        i = _holding(subs, int(p["agent"]))
        subs[i] = _with_skill(subs[i], retract=None)
        return subs
    if k == "intrude":
        a = int(p["agent"])
        subs.append(Subgoal(subgoal_id([a]), (a,), Skill.make("hover", object=p["object"], label=p["label"])))
        return subs
    raise ValueError(f"unknown defect {k!r}")


def _serial_chain(params: dict, subs) -> list[int]:
    """Indices of the subgoals a serialize defect puts in a row (all by default)."""
    if "agents" not in params:
        return list(range(len(subs)))
    wanted = {int(a) for a in params["agents"]}
    return [i for i, s in enumerate(subs) if wanted & set(s.agent_ids)]


def _applicable(kind: str, params: dict, subs: list[Subgoal]) -> bool:
    if kind == "serialize":
        return len(_serial_chain(params, subs)) > 1
    if kind == "parallelize":
        return any(s.start_after for s in subs)
    if kind == "split":
        return any(len(s.agent_ids) > 1 for s in subs)
    if kind == "swap":
        a, b = (int(x) for x in params["agents"])
        i, j = _holding(subs, a), _holding(subs, b)
        return i is not None and j is not None and i != j
    if kind in ("stagger", "relabel", "no_retract"):
        i = _holding(subs, int(params["agent"]))
        if i is None:
            return False
        if kind == "relabel":
            return subs[i].skill.param("label") is not None
        return kind != "no_retract" or bool(subs[i].skill.param("retract"))
    if kind == "intrude":
        return _holding(subs, int(params["agent"])) is None
    return False


def apply_tactic(t: tuple, subs: list[Subgoal]) -> list[Subgoal]:
    """Generic repairs: ``("after", a, b)`` makes b's subgoal wait for a's,
    ``("free", agents)`` drops waits among the agents' subgoals,
    ``("delay", a, n)``, ``("label", a, label)`` and ``("standoff", a, s)``."""
    subs = list(subs)
    kind = t[0]
    if kind == "after":
        i, j = _holding(subs, t[1]), _holding(subs, t[2])
        if i is None or j is None or i == j or _depends(subs, subs[i].id, subs[j].id):
            return subs
        subs[j] = dataclasses.replace(subs[j], start_after=tuple(set(subs[j].start_after) | {subs[i].id}))
        return subs
    if kind == "free":
        idx = {_holding(subs, a) for a in t[1]} - {None}
        ids = {subs[i].id for i in idx}
        for i in idx:
            subs[i] = dataclasses.replace(subs[i], start_after=tuple(set(subs[i].start_after) - ids), delay=0)
        return subs
    i = _holding(subs, t[1])
    if i is None:
        return subs
    if kind == "delay":
        subs[i] = dataclasses.replace(subs[i], delay=subs[i].delay + int(t[2]))
    elif kind == "label" and subs[i].skill.param("label") is not None:
        subs[i] = _with_skill(subs[i], label=t[2])
    elif kind == "standoff" and subs[i].skill.name in ("grasp", "pick", "press", "transfer", "hover"):
        subs[i] = _with_skill(subs[i], standoff_shift=float(t[2]))
    return subs


def generic_tactics(reason: ParsedReason, attempt: int) -> list[tuple]:
    c = reason.constraint
    ag = reason.agents
    if isinstance(c, (CollisionAvoidance, KeepOut)) and len(ag) >= 2:
        lo, hi = sorted(ag[:2])
        return [("after", lo, hi)]
    if isinstance(c, Sequential):
        return [("after", c.before[0], c.after[0])]
    if isinstance(c, Simultaneous):
        ticks = {int(a): int(t) for a, t in re.findall(r"Agent_([0-9]+) (?:contact|start) tick ([0-9]+)",
                                                         reason.detail)}
        if not ticks:
            return [("free", c.agent_ids)]
        hi = max(ticks.values())
        return [("free", c.agent_ids)] + [("delay", a, hi - t) for a, t in ticks.items() if hi > t]
    if isinstance(c, TimeShareSpace) and len(ag) >= 2:
        if "unnecessary serialization" in reason.detail:
            return [("free", ag)]
        return [("after", min(ag[:2]), max(ag[:2]))]
    if isinstance(c, ContactPoint):
        return [("label", c.agent_id, c.annotation_label)]
    if isinstance(c, ApproachDirection):
        return [("standoff", c.agent_id, 0.03 if attempt % 2 else -0.03)]
    if ag:
        return [("delay", ag[0], 10)]
    return []


class ScriptedPlanner:
    """Deterministic phase walker for one ``(task, seed)``."""

    name = "scripted"

    def __init__(self, task: TaskSpec | str, seed: int, repair_budget: int = REPAIR_BUDGET,
                 variants: bool = True):
        self.task = lookup(task) if isinstance(task, str) else task
        self.seed = int(seed)
        self.rng = planner_rng(self.task.task_id, self.seed)
        self.repair_budget = repair_budget
        self.variants = variants
        self.phase = -1
        self.attempts = 0
        self._clean: list[Subgoal] = []
        self.defects: list[Defect] = []
        self.tactics: list[tuple] = []
        self._constraints = ConstraintSet()

    @property
    def phase_count(self) -> int:
        return len(self.task.phases)

    def next_plan(self, observation, task_instruction: str = "", previous: PlanStep | None = None,
                  feedback: Feedback | None = None) -> PlanStep:
        if self.phase < 0 or (feedback is not None and feedback.outcome == SUCCESS):
            self.phase += 1
            if self.phase >= self.phase_count:
                return DONE
            self._draft(observation)
        elif feedback is not None:
            self.attempts += 1
            if self.attempts > self.repair_budget:
                raise PlannerExhausted(f"{self.task.task_id} phase {self.task.phases[self.phase].name!r}: "
                                       f"still violated after {self.repair_budget} repairs: {feedback.reason}")
            self._repair(feedback.reason)
        return self.current()

    def current(self) -> PlanStep:
        if self.phase >= self.phase_count:
            return DONE
        subs = list(self._clean)
        for d in self.defects:
            subs = apply_defect(d, subs)
        for t in self.tactics:
            subs = apply_tactic(t, subs)
        return PlanStep(tuple(subs), self._constraints)

    def _draft(self, scene) -> None:
        spec = self.task.phases[self.phase]
        self.attempts = 0
        self.defects = []
        self.tactics = []
        self._constraints = parse_set(spec.constraints)
        ids = [subgoal_id(s.agents) for s in spec.subgoals]
        self._clean = [Subgoal(ids[i], s.agents, Skill.make(s.skill, **_resolve_params(s.params, scene)),
                               tuple(ids[j] for j in s.after))
                       for i, s in enumerate(spec.subgoals)]
        u = float(self.rng.random())  # drawn for every phase so streams stay aligned
        if not self.variants:
            return
        acc = 0.0
        for v in spec.variants:
            acc += v.p
            if u < acc:
                if _applicable(v.kind, v.params, self._clean):
                    self.defects.append(Defect(v.kind, dict(v.params), self._defect_agents(v)))
                break

    def _defect_agents(self, v) -> frozenset:
        if "agent" in v.params:
            return frozenset({int(v.params["agent"])})
        if "agents" in v.params:
            return frozenset(int(a) for a in v.params["agents"])
        return frozenset(a for s in self._clean for a in s.agent_ids)

    def _repair(self, reason: str) -> None:
        parsed = parse_reason(reason)
        if parsed is None:
            self.tactics.append(("delay", self._clean[0].agent_ids[0], 10))
            return
        hit = set(parsed.agents)
        for d in self.defects:
            if isinstance(parsed.constraint, DETECTED_BY[d.kind]) and d.agents & hit:
                self.defects.remove(d)
                return
        # a defect can surface through a constraint of another type first
        for d in self.defects:
            if d.agents & hit:
                self.defects.remove(d)
                return
        self.tactics.extend(generic_tactics(parsed, self.attempts))


# ---------------------------------------------------------------------------
# remote planner

def request_document(observation, task_instruction: str, previous: PlanStep | None,
                     feedback: Feedback | None) -> dict:
    scene = observation.to_dict()
    return {
        "Task Instruction": task_instruction,
        "Global Observation": scene,
        "Agents Observation": scene["agents"],
        "Previous Subgoals": plan_document(previous)["Subgoals"] if previous else {},
        "Constraint Violation Feedback": [feedback.reason] if feedback and feedback.outcome == VIOLATION else [],
    }


class RemoteClient:
    """Blocking JSON-over-HTTP planner client.

    The endpoint receives the request document as a POST body and must answer
    with a plan document.
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 30.0, repair_budget: int = REPAIR_BUDGET):
        if not endpoint:
            raise ValueError("remote planner needs an endpoint")
        self.endpoint = endpoint
        self.timeout = timeout
        self.repair_budget = repair_budget
        self.attempts = 0

    def next_plan(self, observation, task_instruction: str = "", previous: PlanStep | None = None,
                  feedback: Feedback | None = None) -> PlanStep:
        if feedback is not None and feedback.outcome == VIOLATION:
            self.attempts += 1
            if self.attempts > self.repair_budget:
                raise PlannerExhausted(f"remote plan still violated after {self.repair_budget} repairs")
        else:
            self.attempts = 0
        body = json.dumps(request_document(observation, task_instruction, previous, feedback)).encode()
        req = urllib.request.Request(self.endpoint, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                text = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise RemoteError(f"{self.endpoint}: {exc}") from exc
        try:
            return parse_remote_plan(text)
        except (SchemaError, ParseError, CategoryMismatch) as exc:
            raise RemoteError(f"{self.endpoint}: bad plan document: {exc}") from exc


def next_plan(planner, observation, task_instruction: str = "", previous: PlanStep | None = None,
              feedback: Feedback | None = None) -> PlanStep:
    return planner.next_plan(observation, task_instruction, previous, feedback)
