"""Constraint interfaces and their composition over candidate segments.

Each validator looks at the same tick-by-tick picture of the world (see
:mod:`ccgen.rollout`) and either passes or reports the first tick at which
its constraint breaks. :func:`check_code` runs them in a fixed order and
stops at the first violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import (AlignedGrippers, ApproachDirection, BoxRegion, CollisionAvoidance,
                          ConstraintSet, ContactPoint, Interface, KeepOut, Relation, Sequential,
                          Simultaneous, TimeShareSpace, dispatch, render)
from .errors import BindingError
from .kinematics import chain_frames, default_arm
from .occupancy import (LINK_RADIUS, VOXEL_SIZE, OccupancyGrid, box_voxels, chain_voxels,
                        object_voxels, pack_index, unpack_keys)
from .primitives import WAYPOINT_SPACING
from .rollout import play, segment_span
from .scene import GRASP_DISTANCE, Scene, nearest_annotation, refresh_attached

K_APP = 5  # waypoints
_CONTACT_KINDS = {"grasp": ("grasp",), "press": ("press",), "touch": ("grasp", "press")}


@dataclass(frozen=True)
class Violation:
    constraint: object
    tick: int
    agents: tuple
    reason: str

    def __post_init__(self):
        if not self.reason:
            raise ValueError("a violation needs a reason")


@dataclass(frozen=True)
class CheckReport:
    ok: bool
    violation: Violation | None = None
    violations: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.ok != (self.violation is None):
            raise ValueError("ok must be true exactly when there is no violation")


OK = CheckReport(True)


def format_reason(kind: Interface, agents, constraint, tick: int, detail: str) -> str:
    ids = ", ".join(str(a) for a in agents)
    return f"{kind.value}: agent(s) {ids} violated '{render(constraint)}' at tick {tick}: {detail}"


def _violation(constraint, tick: int, agents, detail: str) -> CheckReport:
    agents = tuple(agents)
    reason = format_reason(dispatch(constraint), agents, constraint, tick, detail)
    return CheckReport(False, Violation(constraint, int(tick), agents, reason))


# ---------------------------------------------------------------------------
# occupancy

_ARM_CACHE: dict = {}
_OBJ_CACHE: dict = {}
_CACHE_LIMIT = 200_000


def _cached(cache: dict, key, fn):
    hit = cache.get(key)
    if hit is None:
        if len(cache) > _CACHE_LIMIT:
            cache.clear()
        hit = cache[key] = fn()
    return hit


def arm_points(scene: Scene, agent_id: int, model=None) -> np.ndarray:
    """Base, joint origins and end effector of one arm, shape (dof + 2, 3)."""
    a = scene.agent(agent_id)
    return chain_frames(model or default_arm(), a.joints.angles, a.base)[:, :3, 3]


def arm_keys(scene: Scene, agent_id: int, model=None) -> np.ndarray:
    a = scene.agent(agent_id)
    key = (a.base.position, a.base.orientation, tuple(a.joints.angles))
    return _cached(_ARM_CACHE, key, lambda: chain_voxels(arm_points(scene, agent_id, model)))


def object_keys(obj) -> np.ndarray:
    key = (obj.asset.id, obj.pose.position, obj.pose.orientation)
    return _cached(_OBJ_CACHE, key, lambda: object_voxels(obj))


def voxelize_scene(scene: Scene, states: dict | None = None, model=None) -> OccupancyGrid:
    """Occupancy of every arm and object. Held objects carry their holders' tags."""
    for a, q in (states or {}).items():
        scene = scene.with_joints(a, q)
    if states:
        scene = refresh_attached(scene, model)
    grid = OccupancyGrid()
    for a in scene.agent_ids:
        grid.add(arm_keys(scene, a, model), ("agent", a))
    for o in scene.objects:
        keys = object_keys(o)
        if o.holders:
            for h in o.holders:
                grid.add(keys, ("agent", h))
        else:
            grid.add(keys, ("object", o.object_id))
    return grid


def region_keys(region, voxel: float = VOXEL_SIZE) -> np.ndarray:
    """Voxels touching a box or sphere region."""
    if isinstance(region, BoxRegion):
        lo, hi = np.asarray(region.lower), np.asarray(region.upper)
        return box_voxels((lo + hi) / 2, np.eye(3), (hi - lo) / 2, voxel)
    c = np.asarray(region.center)
    r = region.radius
    i0 = np.floor((c - r) / voxel).astype(int)
    i1 = np.floor((c + r) / voxel).astype(int)
    keys = []
    for i in range(i0[0], i1[0] + 1):
        for j in range(i0[1], i1[1] + 1):
            for k in range(i0[2], i1[2] + 1):
                lo = np.array([i, j, k]) * voxel
                nearest = np.clip(c, lo, lo + voxel)
                if np.linalg.norm(nearest - c) <= r:
                    keys.append(pack_index(i, j, k))
    return np.unique(np.array(keys, dtype=np.int64))


# ---------------------------------------------------------------------------
# shared per-check context

class Context:
    """Rollout of the candidate segments plus cached per-tick geometry."""

    def __init__(self, scene: Scene, segments, model=None, regions: dict | None = None,
                 constraints: ConstraintSet | None = None):
        self.scene = scene
        self.segments = list(segments)
        self.model = model or default_arm()
        self.regions = regions or {}
        self.constraints = constraints
        self.span = segment_span(self.segments)
        self._rollout = None
        self._ee = {}

    @property
    def rollout(self):
        if self._rollout is None:
            self._rollout = play(self.scene, self.segments, self.model)
        return self._rollout

    def frame(self, t: int):
        return self.rollout.frames[t - self.scene.tick - 1]

    def ticks(self):
        if self.span is None:
            return range(0)
        return range(self.span[0], self.span[1] + 1)

    def segments_of(self, agent_id: int, subgoal_id: str | None = None) -> list:
        return [s for s in self.segments if s.agent_id == agent_id and len(s)
                and (subgoal_id is None or s.subgoal_id == subgoal_id)]

    def ee(self, agent_id: int, t: int) -> np.ndarray:
        key = (agent_id, t)
        if key not in self._ee:
            self._ee[key] = arm_points(self.frame(t).scene, agent_id, self.model)[-1]
        return self._ee[key]

    def contacts(self, agent_id: int, object_id: str, kinds=("grasp", "press")) -> list:
        out = []
        for s in self.segments_of(agent_id):
            for ev in s.events:
                if ev[1] in kinds and ev[2] == object_id:
                    out.append(ev)
        return sorted(out)

    # occupancy of one agent as seen by another agent
    def body_keys(self, agent_id: int, t: int, other: int | None = None) -> np.ndarray:
        fr = self.frame(t)
        parts = [arm_keys(fr.scene, agent_id, self.model)]
        for o in fr.scene.objects:
            if agent_id not in o.holders:
                continue
            if other is not None and (other in o.holders or o.object_id in fr.engaged.get(other, ())):
                continue
            parts.append(object_keys(o))
        return parts[0] if len(parts) == 1 else np.unique(np.concatenate(parts))

    def body_box(self, agent_id: int, t: int):
        fr = self.frame(t)
        pts = arm_points(fr.scene, agent_id, self.model)
        pad = LINK_RADIUS + VOXEL_SIZE
        lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
        for o in fr.scene.objects:
            if agent_id in o.holders:
                a, b = o.aabb()
                lo, hi = np.minimum(lo, a - VOXEL_SIZE), np.maximum(hi, b + VOXEL_SIZE)
        return lo, hi

    def pair_conflict(self, a: int, b: int, t: int):
        """First shared voxel index of agents ``a`` and ``b`` at tick ``t``, or None."""
        la, ha = self.body_box(a, t)
        lb, hb = self.body_box(b, t)
        if np.any(ha < lb) or np.any(hb < la):
            return None
        common = np.intersect1d(self.body_keys(a, t, b), self.body_keys(b, t, a), assume_unique=True)
        if len(common) == 0:
            return None
        return tuple(int(v) for v in unpack_keys(common[:1])[0])


def pair_collisions(scene: Scene, segments, pairs, model=None):
    """Yield ``(tick, a, b, voxel)`` for each colliding pair over the rollout."""
    ctx = Context(scene, segments, model)
    for t in ctx.ticks():
        for a, b in pairs:
            v = ctx.pair_conflict(a, b, t)
            if v is not None:
                yield t, a, b, v


# ---------------------------------------------------------------------------
# binding

def bind_problems(constraint, scene: Scene, segments=(), regions: dict | None = None) -> list[str]:
    problems = []
    agents = set(scene.agent_ids)
    named = list(constraint.agent_ids)
    if isinstance(constraint, KeepOut):
        named += list(constraint.reserved_for)
    for a in named:
        if a not in agents:
            problems.append(f"unknown agent Agent_{a} in '{render(constraint)}'")
    if isinstance(constraint, (ApproachDirection, ContactPoint)):
        if not scene.has_object(constraint.object_id):
            problems.append(f"unknown object {constraint.object_id!r} in '{render(constraint)}'")
        elif isinstance(constraint, ContactPoint):
            asset = scene.object(constraint.object_id).asset
            if constraint.annotation_label not in [n.label for n in asset.annotations]:
                problems.append(f"{constraint.object_id!r} has no annotation "
                                f"{constraint.annotation_label!r}")
    if isinstance(constraint, KeepOut) and constraint.region is None and not (regions or {}).get("designated"):
        problems.append(f"no designated area is defined for '{render(constraint)}'")
    if isinstance(constraint, Sequential):
        ids = {s.subgoal_id for s in segments}
        for a, g in (constraint.before, constraint.after):
            if g is not None and g not in ids:
                problems.append(f"unknown subgoal {g!r} in '{render(constraint)}'")
    return problems


# ---------------------------------------------------------------------------
# direction

def angle_between(u, v) -> float:
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    c = float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(max(-1.0, min(1.0, c)))


def relation_holds(approach, allowed, relation: Relation, tolerance: float) -> tuple[bool, float]:
    """Test one approach vector against one allowed direction; returns (ok, angle)."""
    ang = angle_between(approach, allowed)
    if Relation(relation) == Relation.PERPENDICULAR:
        return abs(ang - math.pi / 2) <= tolerance, ang
    return ang <= tolerance, ang


def _approach_vector(ctx: Context, agent_id: int, tick: int) -> np.ndarray:
    """From the EE position ``K_APP`` waypoints before contact to the contact."""
    end = ctx.ee(agent_id, tick)
    need = K_APP * WAYPOINT_SPACING
    prev = end
    travelled = 0.0
    t = tick
    start = end
    while t > ctx.span[0]:
        t -= 1
        p = ctx.ee(agent_id, t)
        travelled += float(np.linalg.norm(prev - p))
        prev = start = p
        if travelled >= need - 1e-9:
            break
    return end - start


def validate_direction(constraint, segments, scene: Scene, ctx: Context | None = None) -> CheckReport:
    ctx = ctx or Context(scene, segments)
    if isinstance(constraint, AlignedGrippers):
        return _validate_aligned(constraint, ctx)
    a = constraint.agent_id
    for tick, kind, oid, _label in ctx.contacts(a, constraint.object_id):
        vec = _approach_vector(ctx, a, tick)
        if np.linalg.norm(vec) < 1e-9:
            return _violation(constraint, tick, (a,), f"no approach motion before {kind} on "
                                                      f"{constraint.object_id}")
        obj = ctx.frame(tick).scene.object(constraint.object_id)
        label, _ = nearest_annotation(obj, ctx.ee(a, tick))
        ann = obj.asset.annotation(label)
        best = None
        for d in ann.allowed_directions:
            ok, ang = relation_holds(vec, obj.pose.transform_direction(d), constraint.relation,
                                     constraint.tolerance)
            if ok:
                best = None
                break
            err = abs(ang - math.pi / 2) if constraint.relation == Relation.PERPENDICULAR else ang
            if best is None or err < best[0]:
                best = (err, ang)
        else:
            return _violation(
                constraint, tick, (a,),
                f"approach to {constraint.object_id}:{label} makes {math.degrees(best[1]):.1f} deg with the "
                f"allowed direction, required {constraint.relation.value.lower()} within "
                f"{math.degrees(constraint.tolerance):.1f} deg")
    return OK


def _validate_aligned(constraint: AlignedGrippers, ctx: Context) -> CheckReport:
    ids = constraint.agent_ids
    per_agent = [set() for _ in ids]
    for i, a in enumerate(ids):
        for s in ctx.segments_of(a):
            per_agent[i].update(int(t) for t in s.ticks)
    common = sorted(set.intersection(*per_agent)) if per_agent else []
    for t in common:
        z = [float(ctx.ee(a, t)[2]) for a in ids]
        spread = max(z) - min(z)
        if spread > constraint.tolerance:
            hi = ids[int(np.argmax(z))]
            lo = ids[int(np.argmin(z))]
            return _violation(constraint, t, ids,
                              f"gripper heights of Agent_{hi} and Agent_{lo} differ by {spread:.4f} m "
                              f"(limit {constraint.tolerance} m)")
    return OK


# ---------------------------------------------------------------------------
# interaction

def validate_interaction(constraint: ContactPoint, segments, scene: Scene,
                         ctx: Context | None = None) -> CheckReport:
    ctx = ctx or Context(scene, segments)
    a = constraint.agent_id
    kinds = _CONTACT_KINDS[constraint.verb]
    for tick, kind, oid, label in ctx.contacts(a, constraint.object_id, kinds):
        obj = ctx.frame(tick).scene.object(oid)
        point = obj.interaction_point(constraint.annotation_label)
        dist = float(np.linalg.norm(ctx.ee(a, tick) - point))
        if dist > GRASP_DISTANCE:
            return _violation(constraint, tick, (a,),
                              f"{kind} on {oid} is {dist:.4f} m from the {constraint.annotation_label} point "
                              f"(limit {GRASP_DISTANCE} m)")
    return OK


# ---------------------------------------------------------------------------
# spatial occupancy

def validate_spatial(constraint, segments, scene: Scene, ctx: Context | None = None) -> CheckReport:
    ctx = ctx or Context(scene, segments)
    if isinstance(constraint, CollisionAvoidance):
        a = constraint.agent_id
        others = [b for b in scene.agent_ids if b != a] if constraint.others == "All" else list(constraint.others)
        for t in ctx.ticks():
            for b in others:
                v = ctx.pair_conflict(a, b, t)
                if v is not None:
                    return _violation(constraint, t, (a, b),
                                      f"Agent_{a} and Agent_{b} both occupy voxel {v}")
        return OK
    region = constraint.region if constraint.region is not None else ctx.regions["designated"]
    keys = region_keys(region)
    for t in ctx.ticks():
        for a in constraint.agent_ids:
            hit = np.intersect1d(ctx.body_keys(a, t), keys, assume_unique=True)
            if len(hit):
                v = tuple(int(x) for x in unpack_keys(hit[:1])[0])
                return _violation(constraint, t, (a,), f"Agent_{a} enters the region at voxel {v}")
    return OK


# ---------------------------------------------------------------------------
# scheduling

def _sync_tick(ctx: Context, a: int, use_contacts: bool) -> int:
    segs = ctx.segments_of(a)
    if use_contacts:
        return min(ev[0] for s in segs for ev in s.events if ev[1] in ("grasp", "press"))
    return min(s.first_tick for s in segs)


def _has_contact(ctx: Context, a: int) -> bool:
    return any(ev[1] in ("grasp", "press") for s in ctx.segments_of(a) for ev in s.events)


def validate_scheduling(constraint, segments, scene: Scene, ctx: Context | None = None) -> CheckReport:
    ctx = ctx or Context(scene, segments)
    if isinstance(constraint, Sequential):
        (b, gb), (a, ga) = constraint.before, constraint.after
        before = ctx.segments_of(b, gb)
        after = ctx.segments_of(a, ga)
        if not before or not after:
            return OK
        end = max(s.last_tick for s in before)
        start = min(s.first_tick for s in after)
        if start < end:
            return _violation(constraint, start, (b, a),
                              f"Agent_{a} starts at tick {start} before Agent_{b} finishes at tick {end}")
        return OK
    if isinstance(constraint, Simultaneous):
        if ctx.constraints is not None:
            ids = set(constraint.agent_ids)
            for other in ctx.constraints.temporal:
                if isinstance(other, Sequential) and {other.before[0], other.after[0]} <= ids:
                    t = ctx.span[0] if ctx.span else scene.tick
                    return _violation(constraint, t, constraint.agent_ids,
                                      f"cannot hold together with '{render(other)}'")
        active = [a for a in constraint.agent_ids if ctx.segments_of(a)]
        if len(active) < 2:
            return OK
        use_contacts = all(_has_contact(ctx, a) for a in active)
        ticks = {a: _sync_tick(ctx, a, use_contacts) for a in active}
        lo = min(ticks.values())
        hi = max(ticks.values())
        if hi - lo > constraint.tolerance_ticks:
            what = "contact" if use_contacts else "start"
            detail = ", ".join(f"Agent_{a} {what} tick {ticks[a]}" for a in active)
            return _violation(constraint, hi, active,
                              f"{detail}; spread {hi - lo} exceeds {constraint.tolerance_ticks} ticks")
        return OK
    return _validate_time_share(constraint, ctx)


def _validate_time_share(constraint: TimeShareSpace, ctx: Context) -> CheckReport:
    active = [a for a in constraint.agent_ids if ctx.segments_of(a)]
    if len(active) < 2:
        return OK
    occupancy = {}  # agent -> {key: [first, last]}
    spans = {}
    for a in active:
        ticks = sorted({int(t) for s in ctx.segments_of(a) for t in s.ticks})
        spans[a] = (ticks[0], ticks[-1])
        occ = {}
        for t in ticks:
            for k in ctx.body_keys(a, t).tolist():
                iv = occ.get(k)
                if iv is None:
                    occ[k] = [t, t]
                else:
                    iv[1] = t
        occupancy[a] = occ
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            shared = sorted(set(occupancy[a]) & set(occupancy[b]))
            if not shared:
                (a0, a1), (b0, b1) = spans[a], spans[b]
                if a1 < b0 or b1 < a0:
                    t = max(a0, b0)
                    return _violation(constraint, t, (a, b),
                                      f"unnecessary serialization: swept volumes are disjoint but Agent_{a} "
                                      f"runs ticks {a0}-{a1} and Agent_{b} runs ticks {b0}-{b1}")
                continue
            for k in shared:
                (p0, p1), (q0, q1) = occupancy[a][k], occupancy[b][k]
                if p0 <= q1 and q0 <= p1:
                    v = tuple(int(x) for x in unpack_keys([k])[0])
                    return _violation(constraint, max(p0, q0), (a, b),
                                      f"shared voxel {v} is used by Agent_{a} during ticks {p0}-{p1} and by "
                                      f"Agent_{b} during ticks {q0}-{q1}")
    return OK


# ---------------------------------------------------------------------------
# composition

_VALIDATORS = {
    Interface.DIRECTION: validate_direction,
    Interface.INTERACTION: validate_interaction,
    Interface.SPATIAL: validate_spatial,
    Interface.SCHEDULING: validate_scheduling,
}


def check_code(constraints: ConstraintSet, segments, scene: Scene, *, regions: dict | None = None,
               all_violations: bool = False, model=None) -> CheckReport:
    """Evaluate every constraint in order; the report carries the first violation.

    With ``all_violations`` every constraint is evaluated and all violations
    are listed in ``violations`` (the first one is still ``violation``).
    """
    segments = list(segments)
    problems = []
    for c in constraints.ordered():
        problems.extend(bind_problems(c, scene, segments, regions))
    if problems:
        raise BindingError(problems)
    ctx = Context(scene, segments, model, regions, constraints)
    found = []
    for c in constraints.ordered():
        report = _VALIDATORS[dispatch(c)](c, segments, scene, ctx)
        if not report.ok:
            if not all_violations:
                return report
            found.append(report.violation)
    if found:
        return CheckReport(False, found[0], tuple(found))
    return OK
