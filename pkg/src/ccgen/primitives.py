"""Motion primitives and skill expansion.

A primitive turns one command (MOVE, GRASP, ...) into a joint-space segment
whose ticks start at 1, relative to the state it was expanded from. Skills
chain primitives; :func:`plan_subgoal` expands the skill named by a subgoal
for every participating agent.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IkFailure, NothingHeld, OutOfLimits, Unreachable, UnknownAnnotation, UnknownObject
from .geometry import Pose
from .kinematics import (GRIPPER_CLOSED, GRIPPER_OPEN, JointState, Trajectory, chain_frames,
                         default_arm, home_state, inverse_kinematics, min_ticks)
from .scene import Scene, refresh_attached
from .transforms import matrix_to_quat, quat_angle, quat_slerp

KINDS = ("MOVE", "GRASP", "RELEASE", "LIFT", "PRESS", "WAIT")

STANDOFF = 0.10  # m
RETREAT = 0.10  # m
WAYPOINT_SPACING = 0.02  # m
WAYPOINT_ROTATION = 0.1  # rad
PRESS_DWELL = 5  # ticks


@dataclass(frozen=True)
class PrimitiveCall:
    """One primitive command. Which fields are required depends on ``kind``:
    MOVE needs ``target`` (a Pose, or a JointState for a joint-space move),
    GRASP/PRESS need ``object_id`` and ``label``, LIFT needs ``height`` and
    WAIT needs ``ticks``."""

    kind: str
    agent_id: int
    target: Pose | JointState | None = None
    object_id: str | None = None
    label: str | None = None
    height: float | None = None
    ticks: int | None = None

    def __post_init__(self):
        k = self.kind
        if k not in KINDS:
            raise ValueError(f"unknown primitive kind {k!r}")
        if k == "MOVE" and not isinstance(self.target, (Pose, JointState)):
            raise ValueError("MOVE needs a target Pose or JointState")
        if k in ("GRASP", "PRESS") and not (self.object_id and self.label):
            raise ValueError(f"{k} needs object_id and label")
        if k == "LIFT" and (self.height is None or not math.isfinite(self.height)):
            raise ValueError("LIFT needs a finite height")
        if k == "WAIT" and (self.ticks is None or int(self.ticks) < 1):
            raise ValueError("WAIT needs a positive tick count")


def approach_orientation(direction, base_position, target_position) -> np.ndarray:
    """Quaternion whose tool z-axis points along ``direction``.

    The x-axis keeps the same heading relative to the base that the home
    posture has, which keeps the wrist away from neighbouring arms.
    """
    z = np.asarray(direction, dtype=float)
    z = z / np.linalg.norm(z)
    delta = np.asarray(target_position, dtype=float) - np.asarray(base_position, dtype=float)
    az = math.atan2(delta[1], delta[0]) - math.pi / 4
    ref = np.array([math.cos(az), math.sin(az), 0.0])
    x = ref - (ref @ z) * z
    if np.linalg.norm(x) < 1e-6:
        ref = np.array([0.0, 0.0, 1.0])
        x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return matrix_to_quat(np.column_stack([x, y, z]))


def cartesian_waypoints(start: Pose, end: Pose, spacing: float = WAYPOINT_SPACING) -> list[Pose]:
    """Straight-line poses from ``start`` (excluded) to ``end`` (included)."""
    dist = float(np.linalg.norm(np.subtract(end.position, start.position)))
    ang = quat_angle(start.orientation, end.orientation)
    n = max(1, math.ceil(dist / spacing - 1e-9), math.ceil(ang / WAYPOINT_ROTATION - 1e-9))
    p0 = np.asarray(start.position)
    p1 = np.asarray(end.position)
    out = []
    for i in range(1, n + 1):
        t = i / n
        pos = p1 if i == n else p0 + t * (p1 - p0)
        q = np.asarray(end.orientation) if i == n else quat_slerp(start.orientation, end.orientation, t)
        out.append(Pose.from_quat(pos, q))
    return out


def solve_waypoints(agent_id: int, base: Pose, poses: list[Pose], q_start: JointState,
                    model=None, first_index: int = 0) -> list[JointState]:
    model = model or default_arm()
    path = []
    q = q_start
    for i, pose in enumerate(poses):
        try:
            q = inverse_kinematics(model, pose, q, base)
        except (Unreachable, OutOfLimits) as exc:
            raise IkFailure(agent_id, first_index + i, str(exc)) from exc
        path.append(q)
    return path


def waypoint_ticks(q_start: JointState, path: list[JointState]) -> list[int]:
    prev = q_start
    out = []
    for q in path:
        out.append(min_ticks(prev, q))
        prev = q
    return out


def time_path(q_start: JointState, path: list[JointState], ticks: list[int] | None = None) -> np.ndarray:
    """Joint-interpolate through ``path``; returns the per-tick 8-vectors."""
    ticks = ticks or waypoint_ticks(q_start, path)
    rows = []
    prev = q_start.as_array()
    for q, n in zip(path, ticks):
        cur = q.as_array()
        frac = np.arange(1, n + 1, dtype=float) / n
        seg = prev[None, :] + frac[:, None] * (cur - prev)[None, :]
        seg[-1] = cur
        rows.append(seg)
        prev = cur
    return np.vstack(rows) if rows else np.empty((0, 8))


def _segment(agent_id: int, rows: np.ndarray, kind: str, events=(), subgoal_id: str = "") -> Trajectory:
    return Trajectory(agent_id, np.arange(1, len(rows) + 1), rows, subgoal_id, kind, tuple(events))


def _gripper_rows(q: JointState, width: float) -> np.ndarray:
    target = JointState(q.angles, width)
    n = min_ticks(q, target)
    return time_path(q, [target], [n])


class _Ctx:
    """Per-agent expansion context: scene, base, model."""

    def __init__(self, scene: Scene, agent_id: int, model=None):
        self.scene = scene
        self.agent_id = agent_id
        self.model = model or default_arm()
        self.base = scene.agent(agent_id).base

    def ee(self, q: JointState) -> Pose:
        return Pose.from_matrix(chain_frames(self.model, q.angles, self.base)[-1])

    def annotation(self, object_id: str, label: str):
        if not self.scene.has_object(object_id):
            raise UnknownObject(object_id)
        obj = self.scene.object(object_id)
        try:
            ann = obj.asset.annotation(label)
        except KeyError:
            raise UnknownAnnotation(f"{object_id} has no annotation {label!r}") from None
        point = obj.pose.transform_point(ann.local_point)
        direction = obj.pose.transform_direction(ann.allowed_directions[0])
        return point, direction / np.linalg.norm(direction)


def _move_rows(ctx: _Ctx, q: JointState, target, first_index: int = 0) -> np.ndarray:
    if isinstance(target, JointState):
        target = JointState(target.angles, q.gripper)
        return time_path(q, [target])
    path = solve_waypoints(ctx.agent_id, ctx.base, cartesian_waypoints(ctx.ee(q), target), q,
                           ctx.model, first_index)
    return time_path(q, path)


def _approach_rows(ctx: _Ctx, q: JointState, object_id: str, label: str):
    point, direction = ctx.annotation(object_id, label)
    quat = approach_orientation(direction, ctx.base.position, point)
    standoff = Pose.from_quat(point - STANDOFF * direction, quat)
    contact = Pose.from_quat(point, quat)
    rows = []
    ee = ctx.ee(q)
    if np.linalg.norm(np.subtract(ee.position, standoff.position)) > 1e-6 or \
            quat_angle(ee.orientation, standoff.orientation) > 1e-6:
        rows.append(_move_rows(ctx, q, standoff))
        q = JointState.from_array(rows[-1][-1])
    rows.append(_move_rows(ctx, q, contact))
    return np.vstack(rows)


def expand(call: PrimitiveCall, scene: Scene, current: JointState, model=None) -> Trajectory:
    """Expand one primitive from ``current`` into a relative-tick segment."""
    ctx = _Ctx(scene, call.agent_id, model)
    a = call.agent_id
    k = call.kind
    if k == "WAIT":
        rows = np.tile(current.as_array(), (int(call.ticks), 1))
        return _segment(a, rows, k)
    if k == "MOVE":
        return _segment(a, _move_rows(ctx, current, call.target), k)
    if k == "LIFT":
        target = ctx.ee(current).translated((0.0, 0.0, call.height))
        return _segment(a, _move_rows(ctx, current, target), k)
    if k in ("GRASP", "PRESS"):
        rows = _approach_rows(ctx, current, call.object_id, call.label)
        q = JointState.from_array(rows[-1])
        if k == "GRASP":
            rows = np.vstack([rows, _gripper_rows(q, GRIPPER_CLOSED)])
            contact = len(rows)
            kind = "grasp"
        else:
            rows = np.vstack([rows, np.tile(q.as_array(), (PRESS_DWELL, 1))])
            contact = len(rows) - PRESS_DWELL + 1
            kind = "press"
        events = ((1, "engage", call.object_id, call.label), (contact, kind, call.object_id, call.label))
        if k == "GRASP":
            events += ((len(rows), "disengage", call.object_id, call.label),)
        # a pressing gripper stays in contact until it backs off
        return _segment(a, rows, k, events)
    # RELEASE: open, then back off along the tool axis
    held = scene.held_by(a)
    rows = _gripper_rows(current, GRIPPER_OPEN)
    q = JointState.from_array(rows[-1])
    ee = ctx.ee(q)
    back = ee.translated(-RETREAT * ee.rotation()[:, 2])
    rows = np.vstack([rows, _move_rows(ctx, q, back)])
    oid = held.object_id if held is not None else ""
    events = ((1, "engage", oid, ""), (1, "release", oid, ""), (len(rows), "disengage", oid, ""))
    return _segment(a, rows, k, events)


# ---------------------------------------------------------------------------
# skills

@dataclass(frozen=True)
class Skill:
    name: str
    params: tuple = ()

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default

    @classmethod
    def make(cls, name: str, **params) -> "Skill":
        return cls(name, tuple(sorted(params.items())))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params}}

    @classmethod
    def from_dict(cls, d: dict) -> "Skill":
        return cls.make(d["name"], **{k: (tuple(v) if isinstance(v, list) else v)
                                       for k, v in d.get("params", {}).items()})


# name -> (required parameters, optional parameters)
SKILLS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "grasp": (("object", "label"), ("standoff_shift",)),
    "pick": (("object", "label", "height"), ("delta", "standoff_shift")),
    "press": (("object", "label"), ("retreat", "standoff_shift")),
    "hover": (("object", "label"), ("standoff_shift",)),
    "lift": (("height",), ()),
    "carry": ((), ("delta", "position", "anchor")),
    "place": (("position",), ("retract",)),
    "transfer": (("object", "label", "height", "position"), ("retract", "standoff_shift")),
    "release": ((), ("retract",)),
    "home": ((), ()),
    "wait": (("ticks",), ()),
}


def check_skill(skill: Skill) -> None:
    if skill.name not in SKILLS:
        raise ValueError(f"unregistered skill {skill.name!r}")
    required, optional = SKILLS[skill.name]
    names = [k for k, _ in skill.params]
    missing = [p for p in required if skill.param(p) is None]
    unknown = [k for k in names if k not in required and k not in optional]
    if missing or unknown:
        raise ValueError(f"skill {skill.name!r}: missing {missing}, unexpected {unknown}")
    if skill.name == "carry" and (skill.param("delta") is None) == (skill.param("position") is None):
        raise ValueError("carry takes exactly one of delta and position")


@dataclass
class _AgentChain:
    agent_id: int
    q: JointState
    segments: list = field(default_factory=list)
    tick: int = 0

    def push(self, seg: Trajectory, subgoal_id: str):
        seg = dataclasses.replace(seg.shifted(self.tick), subgoal_id=subgoal_id)
        self.segments.append(seg)
        self.tick = seg.last_tick
        self.q = seg.final_state


def carry_delta(skill: Skill, scene: Scene, agent_id: int) -> np.ndarray:
    """Translation that a carry skill applies to the held object."""
    if skill.param("delta") is not None:
        return np.asarray(skill.param("delta"), float)
    held = scene.held_by(agent_id)
    if held is None:
        raise NothingHeld(f"agent {agent_id} has nothing to carry")
    anchor = skill.param("anchor")
    ref = held.interaction_point(anchor) if anchor else np.asarray(held.pose.position)
    return np.asarray(skill.param("position"), float) - ref


def plan_subgoal(subgoal, scene: Scene, states: dict | None = None, model=None) -> list[Trajectory]:
    """Unconstrained primitive chain for every agent named by ``subgoal``.

    Returns the segments of all agents, each agent's segments contiguous and
    numbered from tick 1 relative to the subgoal start.
    """
    model = model or default_arm()
    agents = list(subgoal.agent_ids)
    if not agents:
        return []
    skill = subgoal.skill
    check_skill(skill)
    if states:
        for a, q in states.items():
            scene = scene.with_joints(a, q)
        scene = refresh_attached(scene, model)
    if skill.name in ("lift", "carry") and len(agents) > 1:
        return _co_motion(subgoal, scene, model)
    out = []
    for a in agents:
        out.extend(_single(subgoal, a, scene, model))
    return out


def _single(subgoal, a: int, sc: Scene, model) -> list[Trajectory]:
    skill = subgoal.skill
    name = skill.name
    sid = subgoal.id
    chain = _AgentChain(a, sc.agent(a).joints)
    ctx = _Ctx(sc, a, model)

    def move(target):
        chain.push(expand(PrimitiveCall("MOVE", a, target=target), sc, chain.q, model), sid)

    def prim(kind, **kw):
        chain.push(expand(PrimitiveCall(kind, a, **kw), sc, chain.q, model), sid)

    def approach(kind):
        obj, label = skill.param("object"), skill.param("label")
        point, direction = ctx.annotation(obj, label)
        quat = approach_orientation(direction, ctx.base.position, point)
        shift = float(skill.param("standoff_shift", 0.0) or 0.0)
        if shift:
            move(Pose.from_quat(point - (STANDOFF + shift) * direction, quat))
        move(Pose.from_quat(point - STANDOFF * direction, quat))
        prim(kind, object_id=obj, label=label)
        return direction

    def put_down(position, held_origin):
        delta = np.asarray(position, float) - np.asarray(held_origin, float)
        ee = ctx.ee(chain.q)
        move(ee.translated(delta + np.array([0.0, 0.0, STANDOFF])))
        move(ee.translated(delta))
        prim("RELEASE")

    if name in ("grasp", "pick", "press", "transfer"):
        direction = approach("PRESS" if name == "press" else "GRASP")
        if name in ("pick", "transfer"):
            prim("LIFT", height=float(skill.param("height")))
        if name == "pick" and skill.param("delta") is not None:
            move(ctx.ee(chain.q).translated(tuple(skill.param("delta"))))
        if name == "press" and skill.param("retreat"):
            move(ctx.ee(chain.q).translated(-float(skill.param("retreat")) * direction))
            last = chain.segments[-1]
            chain.segments[-1] = dataclasses.replace(last, events=last.events + (
                (last.last_tick, "disengage", skill.param("object"), skill.param("label")),))
        if name == "transfer":
            obj = sc.object(skill.param("object"))
            origin = np.asarray(obj.pose.position) + np.array([0.0, 0.0, float(skill.param("height"))])
            put_down(skill.param("position"), origin)
    elif name == "hover":
        point, direction = ctx.annotation(skill.param("object"), skill.param("label"))
        shift = float(skill.param("standoff_shift", 0.0) or 0.0)
        move(Pose.from_quat(point - (STANDOFF + shift) * direction,
                            approach_orientation(direction, ctx.base.position, point)))
    elif name == "lift":
        prim("LIFT", height=float(skill.param("height")))
    elif name == "carry":
        move(ctx.ee(chain.q).translated(carry_delta(skill, sc, a)))
    elif name == "place":
        held = sc.held_by(a)
        if held is None:
            raise NothingHeld(f"agent {a} has nothing to place")
        put_down(skill.param("position"), held.pose.position)
    elif name == "release":
        prim("RELEASE")
    elif name == "home":
        move(JointState(home_state().angles, chain.q.gripper))
    elif name == "wait":
        prim("WAIT", ticks=int(skill.param("ticks")))
    if skill.param("retract"):
        move(JointState(home_state().angles, chain.q.gripper))
    return chain.segments


def _co_motion(subgoal, scene: Scene, model) -> list[Trajectory]:
    """Lift or carry a shared object with several grippers on one timeline."""
    skill = subgoal.skill
    if skill.name == "lift":
        delta = np.array([0.0, 0.0, float(skill.param("height"))])
    else:
        delta = carry_delta(skill, scene, subgoal.agent_ids[0])
    paths = {}
    for a in subgoal.agent_ids:
        ctx = _Ctx(scene, a, model)
        q = scene.agent(a).joints
        ee = ctx.ee(q)
        poses = cartesian_waypoints(ee, ee.translated(delta))
        paths[a] = (q, solve_waypoints(a, ctx.base, poses, q, model))
    ticks = np.max([waypoint_ticks(q, p) for q, p in paths.values()], axis=0).tolist()
    kind = "LIFT" if skill.name == "lift" else "MOVE"
    return [_segment(a, time_path(q, p, ticks), kind, subgoal_id=subgoal.id)
            for a, (q, p) in paths.items()]
