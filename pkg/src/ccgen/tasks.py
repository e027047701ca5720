"""Benchmark task definitions: layout, phases, constraints and success tests.

Tasks live in YAML files under ``data/tasks``; see ``docs/task_format.md``.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .constraints import BoxRegion, parse_set
from .errors import CategoryMismatch, ParseError, TaskFormatError, UnboundObject, UnknownTask
from .geometry import Box, Pose
from .kinematics import home_state
from .primitives import SKILLS
from .scene import AgentState, ObjectInstance, Scene, asset_from_dict
from .transforms import quat_angle, yaw_quat

DEFAULT_BASE_DISTANCE = 0.55  # m
_BASE_LAYOUTS = {
    1: ((-1, 0),),
    2: ((-1, 0), (1, 0)),
    3: ((-1, 0), (1, 0), (0, -1)),
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
}

VARIANT_KINDS = ("serialize", "parallelize", "stagger", "split", "swap", "relabel", "no_retract", "intrude")


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    asset: str
    x: tuple[float, float] = (0.0, 0.0)
    y: tuple[float, float] = (0.0, 0.0)
    yaw: tuple[float, float] = (0.0, 0.0)  # degrees
    stacked_on: str | None = None


@dataclass(frozen=True)
class SubgoalSpec:
    agents: tuple[int, ...]
    skill: str
    params: dict
    after: tuple[int, ...] = ()  # indices of earlier subgoals in the same phase


@dataclass(frozen=True)
class Variant:
    kind: str
    p: float
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PhaseSpec:
    name: str
    subgoals: tuple[SubgoalSpec, ...]
    constraints: dict
    variants: tuple[Variant, ...] = ()


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    name: str
    instruction: str
    agent_count: int
    bases: tuple  # (x, y, yaw_deg) per agent
    table_region: Box
    objects: tuple[ObjectSpec, ...]
    assets: dict
    phases: tuple[PhaseSpec, ...]
    success: tuple[dict, ...]
    thresholds: dict = field(default_factory=dict)
    designated_area: BoxRegion | None = None

    @property
    def object_ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def regions(self) -> dict:
        return {"designated": self.designated_area} if self.designated_area is not None else {}


_TASK_FIELDS = {"task_id", "name", "instruction", "agent_count", "bases", "table_region", "objects",
                "phases", "success", "thresholds", "designated_area"}


def _range(v, where: str) -> tuple[float, float]:
    if v is None:
        return (0.0, 0.0)
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    lo, hi = (float(x) for x in v)
    if hi < lo:
        raise TaskFormatError(f"{where}: empty range {v}")
    return lo, hi


def _data_dir(kind: str) -> Path:
    return Path(str(resources.files("ccgen") / "data" / kind))


@lru_cache(maxsize=None)
def load_asset_by_id(asset_id: str):
    path = _data_dir("assets") / f"{asset_id}.yaml"
    if not path.exists():
        raise TaskFormatError(f"unknown asset {asset_id!r}")
    return asset_from_dict(yaml.safe_load(path.read_text()))


def task_from_dict(d: dict) -> TaskSpec:
    if not isinstance(d, dict):
        raise TaskFormatError("task document must be a mapping")
    extra = sorted(set(d) - _TASK_FIELDS)
    if extra:
        raise TaskFormatError(f"unknown task field(s) {extra}")
    try:
        tid = str(d["task_id"])
        n = int(d["agent_count"])
        if not 1 <= n <= 4:
            raise TaskFormatError(f"{tid}: agent_count must be 1-4")
        if d.get("bases"):
            bases = tuple((float(b[0]), float(b[1]), float(b[2])) for b in d["bases"])
        else:
            bases = tuple((DEFAULT_BASE_DISTANCE * sx, DEFAULT_BASE_DISTANCE * sy,
                           math.degrees(math.atan2(-sy, -sx))) for sx, sy in _BASE_LAYOUTS[n])
        if len(bases) != n:
            raise TaskFormatError(f"{tid}: {len(bases)} bases for {n} agents")
        tr = d["table_region"]
        region = Box(tr["center"], tr["half_extents"])
        objects = []
        for o in d["objects"]:
            objects.append(ObjectSpec(str(o["id"]), str(o["asset"]), _range(o.get("x"), tid),
                                      _range(o.get("y"), tid), _range(o.get("yaw"), tid), o.get("stacked_on")))
        assets = {o.asset: load_asset_by_id(o.asset) for o in objects}
        ids = [o.id for o in objects]
        if len(set(ids)) != len(ids):
            raise TaskFormatError(f"{tid}: duplicate object ids")
        phases = []
        for p in d["phases"]:
            subs = []
            for s in p["subgoals"]:
                params = dict(s.get("params") or {})
                skill = str(s["skill"])
                if skill not in SKILLS:
                    raise TaskFormatError(f"{tid}: unknown skill {skill!r}")
                agents = tuple(int(a) for a in s["agents"])
                if not agents or any(not 1 <= a <= n for a in agents):
                    raise TaskFormatError(f"{tid}: subgoal agents {agents} out of range")
                subs.append(SubgoalSpec(agents, skill, params, tuple(int(i) for i in s.get("after", []))))
            used = [a for s in subs for a in s.agents]
            if len(used) != len(set(used)):
                raise TaskFormatError(f"{tid}/{p['name']}: an agent has two subgoals in one phase")
            cons = {k: list(v or []) for k, v in (p.get("constraints") or {}).items()}
            try:
                parse_set(cons)  # fail early on bad sentences
            except (ParseError, CategoryMismatch) as exc:
                raise TaskFormatError(f"{tid}/{p['name']}: {exc}") from exc
            variants = []
            for v in p.get("variants", []) or []:
                v = dict(v)
                kind = v.pop("kind")
                if kind not in VARIANT_KINDS:
                    raise TaskFormatError(f"{tid}: unknown variant {kind!r}")
                variants.append(Variant(kind, float(v.pop("p")), v))
            if sum(v.p for v in variants) > 1.0 + 1e-12:
                raise TaskFormatError(f"{tid}/{p['name']}: variant probabilities exceed 1")
            phases.append(PhaseSpec(str(p["name"]), tuple(subs), cons, tuple(variants)))
        success = tuple(dict(s) for s in d["success"])
        for s in success:
            for key in ("object", "base"):
                if key in s and s[key] not in ids:
                    raise TaskFormatError(f"{tid}: success test names undeclared object {s[key]!r}")
        da = d.get("designated_area")
        area = BoxRegion(da["lower"], da["upper"]) if da else None
        return TaskSpec(tid, str(d.get("name", tid)), str(d["instruction"]), n, bases, region,
                        tuple(objects), assets, tuple(phases), success, dict(d.get("thresholds") or {}), area)
    except TaskFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise TaskFormatError(f"bad task document: {exc!r}") from exc


def load_task(path: str | Path) -> TaskSpec:
    return task_from_dict(yaml.safe_load(Path(path).read_text()))


@lru_cache(maxsize=1)
def _registry() -> dict:
    out = {}
    for path in sorted(_data_dir("tasks").glob("*.yaml")):
        t = load_task(path)
        out[t.task_id] = t
    return out


def registry() -> list[TaskSpec]:
    return list(_registry().values())


def lookup(task_id: str) -> TaskSpec:
    try:
        return _registry()[task_id]
    except KeyError:
        raise UnknownTask(task_id) from None


CORE_TASKS = ("pick_meat", "stack_cube", "strike_cube", "lift_barrier", "pass_shoe", "place_food",
              "two_robots_stack_cube", "three_robots_stack_cube")


# ---------------------------------------------------------------------------
# randomization

def task_rng(task_id: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(task_id.encode())])


def _aabbs_overlap(a, b) -> bool:
    return bool(np.all(a[0] < b[1]) and np.all(b[0] < a[1]))


def _inside(obj: ObjectInstance, region: Box) -> bool:
    lo, hi = obj.aabb()
    return bool(np.all(lo >= region.lower - 1e-12) and np.all(hi <= region.upper + 1e-12))


def randomize_scene(task_id: str, seed: int, max_tries: int = 200) -> Scene:
    """Initial scene for ``(task_id, seed)``; a pure function of both."""
    task = lookup(task_id) if isinstance(task_id, str) else task_id
    if not 0 <= int(seed) < 2 ** 64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    rng = task_rng(task.task_id, seed)
    placed: dict[str, ObjectInstance] = {}
    for spec in task.objects:
        asset = task.assets[spec.asset]
        for _ in range(max_tries):
            if spec.stacked_on:
                below = placed[spec.stacked_on]
                z = float(below.aabb()[1][2])
                pose = Pose(tuple(below.pose.position[:2]) + (z,), below.pose.orientation)
            else:
                x = rng.uniform(*spec.x)
                y = rng.uniform(*spec.y)
                yaw = math.radians(rng.uniform(*spec.yaw))
                pose = Pose((float(x), float(y), float(task.table_region.lower[2])), tuple(yaw_quat(yaw)))
            obj = ObjectInstance(spec.id, asset, pose)
            box = obj.aabb()
            if _inside(obj, task.table_region) and not any(
                    _aabbs_overlap(box, o.aabb()) for o in placed.values()):
                placed[spec.id] = obj
                break
            if spec.stacked_on:
                break
        else:
            raise TaskFormatError(f"{task.task_id}: could not place {spec.id} after {max_tries} tries")
        if spec.id not in placed:
            raise TaskFormatError(f"{task.task_id}: {spec.id} does not fit on {spec.stacked_on}")
    agents = tuple(AgentState(i + 1, Pose((b[0], b[1], 0.0), tuple(yaw_quat(math.radians(b[2])))), home_state())
                   for i, b in enumerate(task.bases))
    return Scene(task.task_id, int(seed), task.table_region, tuple(placed[o.id] for o in task.objects), agents)


# ---------------------------------------------------------------------------
# positions and success

_REF = re.compile(r"^\s*(?P<obj>[A-Za-z][A-Za-z0-9_]*)(?::(?P<label>[A-Za-z][A-Za-z0-9_]*))?\.(?P<axis>[xyz])"
                  r"\s*(?:(?P<sign>[-+])\s*(?P<off>[0-9.eE+-]+))?\s*$")


def _object(scene: Scene, object_id: str):
    if not scene.has_object(object_id):
        raise UnboundObject(object_id)
    return scene.object(object_id)


def resolve_axis(value, scene: Scene) -> float:
    """A number, or ``"<object>[:<label>].<axis> [+|- c]"`` read from ``scene``."""
    if isinstance(value, (int, float)):
        return float(value)
    m = _REF.match(str(value))
    if m is None:
        raise TaskFormatError(f"bad position expression {value!r}")
    obj = _object(scene, m["obj"])
    p = obj.interaction_point(m["label"]) if m["label"] else np.asarray(obj.pose.position)
    v = float(p["xyz".index(m["axis"])])
    if m["off"]:
        v += float(m["off"]) * (-1.0 if m["sign"] == "-" else 1.0)
    return v


def resolve_position(spec, scene: Scene) -> tuple[float, float, float]:
    if len(spec) != 3:
        raise TaskFormatError(f"position needs three entries, got {spec!r}")
    return tuple(resolve_axis(v, scene) for v in spec)


def _point(scene: Scene, object_id: str, label: str | None = None) -> np.ndarray:
    obj = _object(scene, object_id)
    return obj.interaction_point(label) if label else np.asarray(obj.pose.position)


def _test(s: dict, scene: Scene) -> bool:
    kind = s["kind"]
    if kind == "height":
        return float(_point(scene, s["object"], s.get("point"))[2]) >= float(s["min"])
    if kind == "level":
        obj = _object(scene, s["object"])
        return math.degrees(quat_angle(obj.pose.orientation, yaw_quat(_yaw(obj.pose)))) <= float(s["max_tilt"])
    if kind == "above":
        p = _point(scene, s["object"], s.get("point"))
        q = _point(scene, s["base"], s.get("base_point"))
        return bool(np.linalg.norm(p[:2] - q[:2]) <= float(s["xy_max"]) and p[2] > q[2] + float(s.get("min_dz", 0.0))
                    and p[2] - q[2] <= float(s.get("max_dz", math.inf)))
    if kind == "near":
        p = _point(scene, s["object"], s.get("point"))
        target = np.asarray(resolve_position(s["target"], scene))
        dims = slice(0, 2) if s.get("planar") else slice(0, 3)
        return bool(np.linalg.norm(p[dims] - target[dims]) <= float(s["max"]))
    if kind == "ee_near":
        ee = scene.ee_pose(int(s["agent"])).position
        return bool(np.linalg.norm(np.asarray(ee) - _point(scene, s["object"], s.get("point"))) <= float(s["max"]))
    raise TaskFormatError(f"unknown success test {kind!r}")


def _yaw(pose: Pose) -> float:
    R = pose.rotation()
    return math.atan2(R[1, 0], R[0, 0])


def success(task: TaskSpec, scene: Scene) -> bool:
    """Evaluate every success test of ``task`` on ``scene``."""
    return all(_test(s, scene) for s in task.success)
