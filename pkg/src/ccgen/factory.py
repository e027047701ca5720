"""Episode generation: plan, expand, check, execute or replan, record.

An episode is generated from ``(task_id, seed, toggles)`` alone, so running
it again reproduces it bit for bit. Execution is watched by a monitor that
stands in for physics: an inter-agent collision, a missed grasp, a
co-held object pulled out of one gripper or a heavy object moved by too few
hands ends the episode as a failure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brain import Feedback, PlanStep, ScriptedPlanner, next_plan
from .checker import Context, check_code
from .constraints import CollisionAvoidance, ConstraintSet
from .errors import (CCGenError, DivergenceDetected, EmptyInput, InternalInconsistency,
                     PlannerExhausted, RemoteError, SchemaError)
from .kinematics import Trajectory, default_arm
from .primitives import plan_subgoal
from .rollout import play
from .scene import GRASP_DISTANCE, Scene
from .tasks import lookup, randomize_scene
from .tasks import success as task_success

EPISODE_VERSION = "ccgen.episode/1"
_MOVE_TOL = 1e-6  # m, "has this object moved" threshold


@dataclass(frozen=True)
class Toggles:
    """Which constraint categories are checked; logical ones always are."""

    logical: bool = True
    spatial: bool = True
    temporal: bool = True

    def __post_init__(self):
        if not self.logical:
            raise ValueError("logical constraints cannot be switched off")

    def label(self) -> str:
        return "L" + ("+S" if self.spatial else "") + ("+T" if self.temporal else "")

    def to_dict(self) -> dict:
        return {"logical": self.logical, "spatial": self.spatial, "temporal": self.temporal}


ALL_ON = Toggles()
ABLATION_ROWS = (Toggles(spatial=False, temporal=False), Toggles(spatial=False), Toggles(temporal=False), ALL_ON)


@dataclass
class StepRecord:
    plan: PlanStep
    segments: list
    checks: list  # rejected reasons in order, then "ok"
    start_tick: int
    end_tick: int

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "checks": list(self.checks), "start_tick": self.start_tick,
                "end_tick": self.end_tick, "segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(PlanStep.from_dict(d["plan"]), [Trajectory.from_dict(s) for s in d["segments"]],
                   list(d["checks"]), int(d["start_tick"]), int(d["end_tick"]))


@dataclass
class Episode:
    task_id: str
    seed: int
    toggles: Toggles
    planner: str
    steps: list = field(default_factory=list)
    actions: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 8)))  # (ticks, agents, 8)
    events: list = field(default_factory=list)  # [tick, kind, agent, object, label]
    state_hashes: list = field(default_factory=list)
    rejected: list = field(default_factory=list)  # reasons of the attempt that ended the run
    success: bool = False
    failure: str = ""

    @property
    def total_ticks(self) -> int:
        return int(self.actions.shape[0])

    def to_dict(self) -> dict:
        return {
            "version": EPISODE_VERSION,
            "task_id": self.task_id,
            "seed": self.seed,
            "planner": self.planner,
            "toggles": self.toggles.to_dict(),
            "success": self.success,
            "failure": self.failure,
            "total_ticks": self.total_ticks,
            "steps": [s.to_dict() for s in self.steps],
            "rejected": list(self.rejected),
            "actions": self.actions.tolist(),
            "events": [list(e) for e in self.events],
            "state_hashes": list(self.state_hashes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        if d.get("version") != EPISODE_VERSION:
            raise SchemaError(f"unsupported episode version {d.get('version')!r}")
        actions = np.asarray(d["actions"], dtype=float)
        if actions.size == 0:
            actions = actions.reshape(0, 0, 8)
        ep = cls(d["task_id"], int(d["seed"]), Toggles(**d["toggles"]), d["planner"],
                 [StepRecord.from_dict(s) for s in d["steps"]], actions,
                 [list(e) for e in d["events"]], list(d["state_hashes"]), list(d.get("rejected", [])),
                 bool(d["success"]), d.get("failure", ""))
        if ep.total_ticks != int(d["total_ticks"]):
            raise SchemaError("total_ticks does not match the action stream")
        return ep

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        return cls.from_dict(json.loads(line))


# ---------------------------------------------------------------------------
# scheduling a plan step

def _order(subgoals) -> list:
    """Subgoals in dependency order, ties broken by listing order."""
    pending = list(subgoals)
    done, out = set(), []
    while pending:
        ready = [s for s in pending if set(s.start_after) <= done]
        if not ready:
            raise SchemaError(f"circular waits among {[s.id for s in pending]}")
        s = ready[0]
        pending.remove(s)
        out.append(s)
        done.add(s.id)
    return out


def expand_step(step: PlanStep, scene: Scene, model=None) -> list[Trajectory]:
    """Absolute-tick segments for every subgoal of ``step``.

    A subgoal starts right after the step begins, or after the subgoals it
    waits for, plus its delay. Subgoals that start late are planned against
    the scene predicted at their start.
    """
    model = model or default_arm()
    segments: list[Trajectory] = []
    ends = {}
    for sub in _order(step.subgoals):
        if not sub.grounded:
            raise SchemaError(f"subgoal {sub.id} is not grounded to a skill: {sub.text!r}")
        ready = max((ends[d] for d in sub.start_after), default=scene.tick)
        start = ready + 1 + sub.delay
        at = scene
        if start - 1 > scene.tick:
            at = play(scene, segments, model, end=start - 1).final
        planned = [s.shifted(start - 1) for s in plan_subgoal(sub, at, model=model)]
        segments.extend(planned)
        ends[sub.id] = max((s.last_tick for s in planned if len(s)), default=start - 1)
    return segments


# ---------------------------------------------------------------------------
# execution monitor

def _covered(constraints: ConstraintSet, a: int, b: int) -> bool:
    for c in constraints.spatial:
        if isinstance(c, CollisionAvoidance):
            for x, y in ((a, b), (b, a)):
                if c.agent_id == x and (c.others == "All" or y in c.others):
                    return True
    return False


def _state_hash(scene: Scene) -> str:
    parts = [np.asarray(a.joints.as_array()) for a in scene.agents]
    parts += [np.asarray(o.pose.to_list(), dtype=float) for o in scene.objects]
    h = hashlib.sha256(np.concatenate(parts).tobytes())
    h.update(repr([o.holders for o in scene.objects]).encode())
    return h.hexdigest()[:16]


def monitor(scene: Scene, segments, checked: ConstraintSet, model=None):
    """Play ``segments`` and return ``(rollout, failure)``; failure is "" when clean.

    ``checked`` holds the constraints the segments passed; a collision between
    two agents covered by one of them means the checker was unsound.
    """
    ctx = Context(scene, segments, model)
    rollout = ctx.rollout
    agents = scene.agent_ids
    pairs = [(a, b) for i, a in enumerate(agents) for b in agents[i + 1:]]
    misses = {t: (a, o, why) for t, a, o, why in rollout.misses}
    prev = scene
    for fr in rollout.frames:
        t = fr.tick
        if t in misses:
            a, o, why = misses[t]
            return rollout, f"tick {t}: Agent_{a} missed the grasp of {o}: {why}"
        for a, b in pairs:
            v = ctx.pair_conflict(a, b, t)
            if v is None:
                continue
            if _covered(checked, a, b):
                raise InternalInconsistency(f"committed segments collide: Agent_{a} and Agent_{b} "
                                            f"share voxel {v} at tick {t}")
            return rollout, f"tick {t}: Agent_{a} and Agent_{b} collide at voxel {v}"
        for o in fr.scene.objects:
            for h, g in zip(o.holders[1:], o.grasps[1:]):
                want = o.pose.compose(g.inverse()).position
                have = fr.scene.ee_pose(h, model).position
                if np.linalg.norm(np.asarray(want) - np.asarray(have)) > GRASP_DISTANCE:
                    return rollout, f"tick {t}: {o.object_id} slipped out of the gripper of Agent_{h}"
            need = o.asset.min_holders
            if need > 1 and len(o.holders) < need:
                before = prev.object(o.object_id).pose.position
                if np.linalg.norm(np.asarray(o.pose.position) - np.asarray(before)) > _MOVE_TOL and o.holders:
                    return rollout, f"tick {t}: {o.object_id} moved with {len(o.holders)} of {need} holders"
        prev = fr.scene
    return rollout, ""


# ---------------------------------------------------------------------------
# generation

def _planner(task, seed: int, planner):
    if planner is None or planner == "scripted":
        return ScriptedPlanner(task, seed)
    return planner


def _executed_events(segments, misses) -> list:
    missed = {(t, a, o) for t, a, o, _ in misses}
    out = []
    for s in segments:
        for ev in s.events:
            tick, kind, obj, label = ev[:4]
            if kind == "grasp" and (tick, s.agent_id, obj) not in missed:
                out.append([int(tick), "attach", s.agent_id, obj, label])
            elif kind == "release":
                out.append([int(tick), "detach", s.agent_id, obj, label])
            elif kind == "press":
                out.append([int(tick), "press", s.agent_id, obj, label])
    return sorted(out, key=lambda e: (e[0], e[2], e[1]))


def generate_episode(task_id: str, seed: int, toggles: Toggles = ALL_ON, planner=None,
                     model=None) -> Episode:
    """Run the plan/check/execute loop for one seed.

    ``planner`` is ``None`` or ``"scripted"`` for the built-in planner, or any
    object with a ``next_plan`` method (for instance a remote client).
    """
    task = lookup(task_id)
    model = model or default_arm()
    scene = randomize_scene(task, seed)
    planner = _planner(task, seed, planner)
    ep = Episode(task.task_id, int(seed), toggles, getattr(planner, "name", type(planner).__name__))
    n = len(scene.agents)
    actions = []
    rejected: list[str] = []
    previous = None
    feedback = None
    step = None
    while True:
        try:
            step = next_plan(planner, scene, task.instruction, previous, feedback)
        except (PlannerExhausted, RemoteError) as exc:
            ep.failure = f"{type(exc).__name__}: {exc}"
            break
        if step.done:
            break
        try:
            segments = expand_step(step, scene, model)
            active = step.constraints.filtered(True, toggles.spatial, toggles.temporal)
            report = check_code(active, segments, scene, regions=task.regions(), model=model)
        except (CCGenError, ValueError) as exc:  # binding, IK and skill errors end the run
            ep.failure = f"{type(exc).__name__}: {exc}"
            break
        if not report.ok:
            rejected.append(report.violation.reason)
            previous, feedback = step, Feedback.violation(report.violation.reason)
            continue
        rollout, failure = monitor(scene, segments, active, model)
        start = scene.tick
        for fr in rollout.frames:
            actions.append([fr.scene.agent(a).joints.as_array() for a in range(1, n + 1)])
            ep.state_hashes.append(_state_hash(fr.scene))
        ep.events.extend(_executed_events(segments, rollout.misses))
        ep.steps.append(StepRecord(step, segments, rejected + ["ok"], start, rollout.final.tick))
        rejected = []
        scene = rollout.final
        if failure:
            ep.failure = failure
            break
        previous, feedback = step, Feedback.success()
    ep.rejected = rejected
    ep.actions = np.asarray(actions, dtype=float).reshape(len(actions), n, 8)
    if not ep.failure:
        if step is not None and step.done and task_success(task, scene):
            ep.success = True
        else:
            ep.failure = "success condition not met"
    return ep


# ---------------------------------------------------------------------------
# replay and metrics

def stream_segments(episode: Episode) -> list[Trajectory]:
    """One trajectory per agent covering the whole action stream, with the
    committed segments' events attached."""
    ticks = np.arange(1, episode.total_ticks + 1)
    evs = {}
    for st in episode.steps:
        for s in st.segments:
            evs.setdefault(s.agent_id, []).extend(tuple(e) for e in s.events)
    n = episode.actions.shape[1] if episode.actions.ndim == 3 else 0
    return [Trajectory(a + 1, ticks, episode.actions[:, a, :], "stream", "", tuple(sorted(evs.get(a + 1, []))))
            for a in range(n)]


def replay_episode(episode: Episode, model=None) -> dict:
    """Regenerate ``episode`` and compare the action streams bit for bit.

    Episodes from a non-scripted planner cannot be regenerated; their
    committed segments are played again instead.
    """
    if episode.planner == "scripted":
        fresh = generate_episode(episode.task_id, episode.seed, episode.toggles, model=model)
        mine, theirs = episode.actions, fresh.actions
    else:
        scene = randomize_scene(lookup(episode.task_id), episode.seed)
        segs = [s for st in episode.steps for s in st.segments]
        frames = play(scene, segs, model).frames if segs else []
        n = len(scene.agents)
        theirs = np.asarray([[f.scene.agent(a).joints.as_array() for a in range(1, n + 1)] for f in frames],
                            dtype=float).reshape(len(frames), n, 8)
        mine = episode.actions
        fresh = None
    common = min(len(mine), len(theirs))
    if common and mine.shape[1:] != theirs.shape[1:]:
        raise DivergenceDetected(1, f"agent count differs: {mine.shape[1]} vs {theirs.shape[1]}")
    for i in range(common):
        if mine[i].tobytes() != theirs[i].tobytes():
            bad = np.argwhere(mine[i] != theirs[i])
            a, k = (int(x) for x in bad[0]) if len(bad) else (0, 0)
            raise DivergenceDetected(i + 1, f"Agent_{a + 1} action[{k}] recorded {mine[i, a, k]!r}, "
                                            f"regenerated {theirs[i, a, k]!r}")
    if len(mine) != len(theirs):
        raise DivergenceDetected(common + 1, f"stream length {len(mine)} vs regenerated {len(theirs)}")
    if fresh is not None:
        if fresh.state_hashes != episode.state_hashes:
            i = next((i for i, (x, y) in enumerate(zip(fresh.state_hashes, episode.state_hashes)) if x != y),
                     min(len(fresh.state_hashes), len(episode.state_hashes)))
            raise DivergenceDetected(i + 1, "state snapshot hash differs")
        if fresh.success != episode.success:
            raise DivergenceDetected(common, f"success flag {episode.success} vs regenerated {fresh.success}")
    return {"task_id": episode.task_id, "seed": episode.seed, "identical": True, "ticks": len(mine)}


def revalidate_spatial(episode: Episode, model=None):
    """Check collision avoidance for every agent over the full action stream."""
    scene = randomize_scene(lookup(episode.task_id), episode.seed)
    cons = ConstraintSet(spatial=tuple(CollisionAvoidance(a, "All") for a in scene.agent_ids))
    return check_code(cons, stream_segments(episode), scene, model=model, all_violations=True)


def measure(episodes) -> dict:
    episodes = list(episodes)
    if not episodes:
        raise EmptyInput("no episodes to measure")
    wins = [e for e in episodes if e.success]
    avg = float(np.mean([e.total_ticks for e in wins])) if wins else None
    return {"episodes": len(episodes), "successes": len(wins), "success_rate": len(wins) / len(episodes),
            "avg_episode_length": avg}


def write_dataset(path: str | Path, episodes) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(ep.to_json())
            fh.write("\n")


def read_dataset(path: str | Path) -> list[Episode]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Episode.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}: line {n} is not an episode record: {exc}") from exc
    return out
