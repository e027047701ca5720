"""Small scene builders shared by the unit tests."""

from __future__ import annotations

import math

import numpy as np

from ccgen.geometry import Box, Pose
from ccgen.kinematics import JointState, home_state
from ccgen.scene import Asset, AgentState, InteractionAnnotation, ObjectInstance, Scene
from ccgen.transforms import yaw_quat

# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []

TABLE = Box((0.0, 0.0, 0.3), (1.0, 1.0, 0.3))


def base_pose(x: float, y: float, yaw_deg: float | None = None) -> Pose:
    yaw = math.atan2(-y, -x) if yaw_deg is None else math.radians(yaw_deg)
    return Pose((x, y, 0.0), yaw_quat(yaw))


def cube_asset(half: float = 0.02, asset_id: str = "cube", max_holders: int = 1) -> Asset:
    return Asset(asset_id, (Box((0.0, 0.0, half), (half, half, half)),),
                 (InteractionAnnotation("top", (0.0, 0.0, 2 * half), ((0.0, 0.0, -1.0),)),),
                 max_holders=max_holders)


def make_scene(bases=((-0.55, 0.0),), objects=(), joints=None, tick: int = 0) -> Scene:
    agents = []
    for i, b in enumerate(bases, start=1):
        q = (joints or {}).get(i, home_state())
        agents.append(AgentState(i, base_pose(*b), q))
    return Scene("unit", 0, TABLE, tuple(objects), tuple(agents), tick)


def place(asset: Asset, oid: str, xyz, yaw: float = 0.0) -> ObjectInstance:
    return ObjectInstance(oid, asset, Pose(tuple(xyz), yaw_quat(yaw)))


def random_state(rng: np.random.Generator, model, gripper: float = 0.08) -> JointState:
    lo, hi = model.lower, model.upper
    return JointState(tuple(rng.uniform(lo + 0.05, hi - 0.05)), gripper)
