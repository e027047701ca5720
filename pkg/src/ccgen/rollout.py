"""Tick-by-tick playback of committed or candidate segments.

Both the checker and the executor need the same picture of the world at
every tick: joint states, who holds what (grasp and release events change
that) and which objects an agent is currently working on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AlreadyHeld, NothingHeld, TooFar
from .kinematics import JointState, default_arm
from .scene import Scene, attach, detach, refresh_attached, settle

# events are applied in this order within one tick
_EVENT_ORDER = {"release": 0, "disengage": 1, "engage": 2, "grasp": 3, "press": 4}


@dataclass(frozen=True)
class Frame:
    tick: int
    scene: Scene
    moving: frozenset  # agents with a sample at this tick
    engaged: dict  # agent -> frozenset of object ids


@dataclass
class Rollout:
    """Result of :func:`play`: one frame per tick plus bookkeeping."""

    frames: list = field(default_factory=list)
    misses: list = field(default_factory=list)  # (tick, agent, object, reason)
    final: Scene | None = None

    def span(self) -> tuple[int, int]:
        return self.frames[0].tick, self.frames[-1].tick


def by_agent(segments) -> dict:
    """Merge segments per agent into ``{agent: (ticks, states, events)}``."""
    out = {}
    for seg in sorted(segments, key=lambda s: (s.agent_id, s.first_tick if len(s) else 0)):
        t, s, e = out.setdefault(seg.agent_id, ([], [], []))
        t.append(seg.ticks)
        s.append(seg.states)
        e.extend(seg.events)
    merged = {}
    for a, (t, s, e) in out.items():
        ticks = np.concatenate(t) if t else np.empty(0, np.int64)
        states = np.vstack(s) if s else np.empty((0, 8))
        if len(ticks) > 1 and np.any(np.diff(ticks) <= 0):
            raise ValueError(f"agent {a} has overlapping segments")
        merged[a] = (ticks, states, sorted(e, key=lambda ev: (ev[0], _EVENT_ORDER.get(ev[1], 9))))
    return merged


def segment_span(segments) -> tuple[int, int] | None:
    segs = [s for s in segments if len(s)]
    if not segs:
        return None
    return min(s.first_tick for s in segs), max(s.last_tick for s in segs)


def play(scene: Scene, segments, model=None, end: int | None = None, settle_free: bool = True) -> Rollout:
    """Advance ``scene`` through ``segments`` (absolute ticks after ``scene.tick``).

    Agents without a sample at some tick hold their last state. A grasp that
    cannot attach is recorded in ``misses`` rather than raised.
    """
    model = model or default_arm()
    tracks = by_agent(segments)
    span = segment_span(segments)
    if end is None:
        end = span[1] if span else scene.tick
    cursor = {a: 0 for a in tracks}
    engaged = {a: set() for a in scene.agent_ids}
    events = sorted(((ev, a) for a, (_, _, evs) in tracks.items() for ev in evs),
                    key=lambda x: (x[0][0], _EVENT_ORDER.get(x[0][1], 9), x[1]))
    ei = 0
    out = Rollout()
    for t in range(scene.tick + 1, end + 1):
        moving = set()
        for a, (ticks, states, _) in tracks.items():
            i = cursor[a]
            if i < len(ticks) and ticks[i] == t:
                scene = scene.with_joints(a, JointState.from_array(states[i]))
                cursor[a] = i + 1
                moving.add(a)
        scene = refresh_attached(scene, model)
        while ei < len(events) and events[ei][0][0] <= t:
            (_, kind, oid, _), a = events[ei][0][:4], events[ei][1]
            ei += 1
            if kind == "engage" and oid:
                engaged[a].add(oid)
            elif kind == "disengage":
                engaged[a].discard(oid)
            elif kind == "grasp":
                try:
                    scene = attach(scene, a, oid, model=model)
                except (TooFar, AlreadyHeld) as exc:
                    out.misses.append((t, a, oid, str(exc)))
            elif kind == "release":
                held = scene.held_by(a)
                try:
                    scene = detach(scene, a, model)
                except NothingHeld:
                    continue
                if settle_free and held is not None and not scene.object(held.object_id).holders:
                    scene = settle(scene, held.object_id)
        scene = _with_tick(scene, t)
        out.frames.append(Frame(t, scene, frozenset(moving), {a: frozenset(v) for a, v in engaged.items()}))
    out.final = scene
    return out


def _with_tick(scene: Scene, t: int) -> Scene:
    return replace(scene, tick=t)
