"""World model: assets, object instances, agents and kinematic grasping.

A :class:`Scene` is an immutable value; every update returns a new scene.
Objects held by a gripper follow its end effector through a grasp transform
recorded at attach time.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import AlreadyHeld, AssetFormatError, NothingHeld, TooFar, UnknownObject
from .geometry import Box, Pose, world_aabb
from .kinematics import chain_frames, default_arm

GRASP_DISTANCE = 0.02  # m


@dataclass(frozen=True)
class InteractionAnnotation:
    label: str
    local_point: tuple[float, float, float]
    allowed_directions: tuple[tuple[float, float, float], ...]
    angular_tolerance: float = math.radians(15.0)

    def __post_init__(self):
        object.__setattr__(self, "local_point", tuple(float(x) for x in self.local_point))
        dirs = tuple(tuple(float(x) for x in d) for d in self.allowed_directions)
        if not dirs:
            raise ValueError(f"annotation {self.label!r} needs at least one direction")
        for d in dirs:
            if len(d) != 3 or abs(math.sqrt(sum(x * x for x in d)) - 1.0) > 1e-9:
                raise ValueError(f"annotation {self.label!r}: direction {d} is not unit-norm")
        object.__setattr__(self, "allowed_directions", dirs)
        if not 0.0 < self.angular_tolerance <= math.pi:
            raise ValueError("angular_tolerance must lie in (0, pi]")


@dataclass(frozen=True)
class Asset:
    id: str
    shape: tuple[Box, ...]
    annotations: tuple[InteractionAnnotation, ...] = ()
    min_holders: int = 1
    max_holders: int = 1

    def __post_init__(self):
        labels = [a.label for a in self.annotations]
        if len(labels) != len(set(labels)):
            raise ValueError(f"asset {self.id!r}: duplicate annotation labels")
        if not self.shape:
            raise ValueError(f"asset {self.id!r} has no boxes")
        if not 1 <= self.min_holders <= self.max_holders:
            raise ValueError(f"asset {self.id!r}: need 1 <= min_holders <= max_holders")

    def annotation(self, label: str) -> InteractionAnnotation:
        for a in self.annotations:
            if a.label == label:
                return a
        raise KeyError(label)


_ASSET_FIELDS = {"id", "shape", "annotations", "min_holders", "max_holders"}
_BOX_FIELDS = {"center", "half_extents"}
_ANN_FIELDS = {"label", "local_point", "allowed_directions", "angular_tolerance"}


def _reject_unknown(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise AssetFormatError(f"{where}: expected a mapping")
    extra = sorted(set(d) - allowed)
    if extra:
        raise AssetFormatError(f"{where}: unknown field(s) {extra}")


def asset_from_dict(d: dict) -> Asset:
    _reject_unknown(d, _ASSET_FIELDS, "asset")
    try:
        name = d["id"]
        boxes = []
        for i, b in enumerate(d["shape"]):
            _reject_unknown(b, _BOX_FIELDS, f"asset {name} box {i}")
            boxes.append(Box(b["center"], b["half_extents"]))
        anns = []
        for a in d.get("annotations", []):
            _reject_unknown(a, _ANN_FIELDS, f"asset {name} annotation")
            dirs = tuple(tuple(np.asarray(v, float) / np.linalg.norm(v)) for v in a["allowed_directions"])
            anns.append(InteractionAnnotation(a["label"], tuple(a["local_point"]), dirs,
                                              float(a.get("angular_tolerance", math.radians(15.0)))))
        return Asset(name, tuple(boxes), tuple(anns), int(d.get("min_holders", 1)),
                     int(d.get("max_holders", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise AssetFormatError(f"bad asset document: {exc}") from exc


def load_asset(path: str | Path) -> Asset:
    return asset_from_dict(yaml.safe_load(Path(path).read_text()))


def asset_to_dict(a: Asset) -> dict:
    return {
        "id": a.id,
        "shape": [b.to_dict() for b in a.shape],
        "annotations": [
            {"label": n.label, "local_point": list(n.local_point),
             "allowed_directions": [list(v) for v in n.allowed_directions],
             "angular_tolerance": n.angular_tolerance}
            for n in a.annotations
        ],
        "min_holders": a.min_holders,
        "max_holders": a.max_holders,
    }


@dataclass(frozen=True)
class ObjectInstance:
    object_id: str
    asset: Asset
    pose: Pose
    holders: tuple[int, ...] = ()
    grasps: tuple[Pose, ...] = ()

    @property
    def attachment(self) -> int | None:
        """Agent id of the primary holder, ``None`` when resting in the world."""
        return self.holders[0] if self.holders else None

    def interaction_point(self, label: str) -> np.ndarray:
        return self.pose.transform_point(self.asset.annotation(label).local_point)

    def interaction_direction(self, label: str, index: int = 0) -> np.ndarray:
        return self.pose.transform_direction(self.asset.annotation(label).allowed_directions[index])

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for b in self.asset.shape:
            a, c = world_aabb(self.pose, b)
            lo = np.minimum(lo, a)
            hi = np.maximum(hi, c)
        return lo, hi


@dataclass(frozen=True)
class AgentState:
    agent_id: int
    base: Pose
    joints: "object"  # kinematics.JointState


@dataclass(frozen=True)
class Scene:
    task_id: str
    seed: int
    table_region: Box
    objects: tuple[ObjectInstance, ...]
    agents: tuple[AgentState, ...]
    tick: int = 0

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ValueError(f"agent ids must be 1..n, got {ids}")
        if self.tick < 0:
            raise ValueError("tick must be non-negative")

    @property
    def agent_ids(self) -> list[int]:
        return [a.agent_id for a in self.agents]

    def object(self, object_id: str) -> ObjectInstance:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise UnknownObject(object_id)

    def has_object(self, object_id: str) -> bool:
        return any(o.object_id == object_id for o in self.objects)

    def agent(self, agent_id: int) -> AgentState:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(f"no agent {agent_id}")

    def held_by(self, agent_id: int) -> ObjectInstance | None:
        for o in self.objects:
            if agent_id in o.holders:
                return o
        return None

    def with_object(self, obj: ObjectInstance) -> "Scene":
        objs = tuple(obj if o.object_id == obj.object_id else o for o in self.objects)
        return dataclasses.replace(self, objects=objs)

    def with_joints(self, agent_id: int, joints) -> "Scene":
        agents = tuple(dataclasses.replace(a, joints=joints) if a.agent_id == agent_id else a
                       for a in self.agents)
        return dataclasses.replace(self, agents=agents)

    def ee_pose(self, agent_id: int, model=None) -> Pose:
        a = self.agent(agent_id)
        model = model or default_arm()
        return Pose.from_matrix(chain_frames(model, a.joints.angles, a.base)[-1])

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "tick": self.tick,
            "table_region": self.table_region.to_dict(),
            "agents": [{"agent_id": a.agent_id, "base": a.base.to_list(),
                        "joints": list(a.joints.angles) + [a.joints.gripper]} for a in self.agents],
            "objects": [{"object_id": o.object_id, "asset": o.asset.id, "pose": o.pose.to_list(),
                         "holders": list(o.holders), "grasps": [g.to_list() for g in o.grasps]}
                        for o in self.objects],
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def refresh_attached(scene: Scene, model=None) -> Scene:
    """Recompute held-object poses from each primary holder's end effector."""
    objs = []
    changed = False
    for o in scene.objects:
        if o.holders:
            ee = scene.ee_pose(o.holders[0], model)
            o = dataclasses.replace(o, pose=ee.compose(o.grasps[0]))
            changed = True
        objs.append(o)
    return dataclasses.replace(scene, objects=tuple(objs)) if changed else scene


def nearest_annotation(obj: ObjectInstance, point) -> tuple[str, float]:
    best, dist = "", math.inf
    for ann in obj.asset.annotations:
        d = float(np.linalg.norm(obj.pose.transform_point(ann.local_point) - np.asarray(point)))
        if d < dist:
            best, dist = ann.label, d
    return best, dist


def attach(scene: Scene, agent_id: int, object_id: str, grasp_distance: float = GRASP_DISTANCE,
           model=None) -> Scene:
    """Rigidly attach ``object_id`` to the gripper of ``agent_id``.

    A second gripper may join an object whose asset allows several holders;
    the object keeps following its first holder.
    """
    obj = scene.object(object_id)
    if scene.held_by(agent_id) is not None:
        raise AlreadyHeld(f"agent {agent_id} already holds {scene.held_by(agent_id).object_id}")
    if obj.holders and len(obj.holders) >= obj.asset.max_holders:
        raise AlreadyHeld(f"{object_id} is already held by agent(s) {list(obj.holders)}")
    ee = scene.ee_pose(agent_id, model)
    label, dist = nearest_annotation(obj, ee.position)
    if dist > grasp_distance + 1e-12:
        raise TooFar(f"agent {agent_id} end effector is {dist:.4f} m from {object_id}:{label}"
                     f" (limit {grasp_distance} m)")
    grasp = ee.inverse().compose(obj.pose)
    return scene.with_object(dataclasses.replace(obj, holders=obj.holders + (agent_id,),
                                                 grasps=obj.grasps + (grasp,)))


def detach(scene: Scene, agent_id: int, model=None) -> Scene:
    """Release whatever ``agent_id`` holds; the pose stays where it is."""
    obj = scene.held_by(agent_id)
    if obj is None:
        raise NothingHeld(f"agent {agent_id} holds nothing")
    keep = [(h, g) for h, g in zip(obj.holders, obj.grasps) if h != agent_id]
    if keep and keep[0][0] != obj.holders[0]:
        # the next holder takes over; re-derive its grasp from the current pose
        h0 = keep[0][0]
        keep[0] = (h0, scene.ee_pose(h0, model).inverse().compose(obj.pose))
    return scene.with_object(dataclasses.replace(
        obj, holders=tuple(h for h, _ in keep), grasps=tuple(g for _, g in keep)))


def settle(scene: Scene, object_id: str, tol: float = 0.01) -> Scene:
    """Drop a free object straight down onto the highest support under it."""
    obj = scene.object(object_id)
    if obj.holders:
        return scene
    lo, hi = obj.aabb()
    floor = float(scene.table_region.lower[2])
    support = floor
    for other in scene.objects:
        if other.object_id == object_id:
            continue
        for box in other.asset.shape:
            blo, bhi = world_aabb(other.pose, box)
            overlap = (lo[0] < bhi[0] and hi[0] > blo[0] and lo[1] < bhi[1] and hi[1] > blo[1])
            if overlap and bhi[2] <= lo[2] + tol:
                support = max(support, float(bhi[2]))
    drop = lo[2] - support
    if drop <= 0.0:
        return scene
    return scene.with_object(dataclasses.replace(obj, pose=obj.pose.translated((0.0, 0.0, -drop))))
