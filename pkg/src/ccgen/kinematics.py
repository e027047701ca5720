"""Serial-chain forward/inverse kinematics and joint-space trajectories.

The default arm is a 7-DoF Panda-like chain built from the published
modified-DH constants. A tick is one control step; joint motion is bounded by
``MAX_JOINT_STEP`` rad per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import OutOfLimits, TooFast, Unreachable
from .geometry import Pose
from .transforms import rot_x, translation

MAX_JOINT_STEP = 0.05  # rad per tick
MAX_GRIPPER_STEP = 0.02  # m per tick
GRIPPER_OPEN = 0.08
GRIPPER_CLOSED = 0.0

IK_POS_TOL = 1e-4
IK_ANG_TOL = 1e-3
IK_DAMPING = 0.05
IK_STEP_CLAMP = 0.2
IK_MAX_ITER = 200

# (a_{i-1}, d_i, alpha_{i-1}) per joint, Craig convention
PANDA_MDH = (
    (0.0, 0.333, 0.0),
    (0.0, 0.0, -math.pi / 2),
    (0.0, 0.316, math.pi / 2),
    (0.0825, 0.0, math.pi / 2),
    (-0.0825, 0.384, -math.pi / 2),
    (0.0, 0.0, math.pi / 2),
    (0.088, 0.0, math.pi / 2),
)
PANDA_FLANGE = 0.107
PANDA_LIMITS = (
    (-2.8973, 2.8973),
    (-1.7628, 1.7628),
    (-2.8973, 2.8973),
    (-3.0718, -0.0698),
    (-2.8973, 2.8973),
    (-0.0175, 3.7525),
    (-2.8973, 2.8973),
)
PANDA_HOME = (0.0, -math.pi / 4, 0.0, -3 * math.pi / 4, 0.0, math.pi / 2, math.pi / 4)


@dataclass(frozen=True)
class JointState:
    angles: tuple[float, ...]
    gripper: float = GRIPPER_OPEN

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "gripper", float(self.gripper))
        if not 0.0 <= self.gripper <= GRIPPER_OPEN:
            raise ValueError(f"gripper width {self.gripper} outside [0, {GRIPPER_OPEN}]")

    def as_array(self) -> np.ndarray:
        """The 8-vector (7 angles + gripper width) recorded as an action."""
        return np.array(self.angles + (self.gripper,))

    @classmethod
    def from_array(cls, a) -> "JointState":
        a = [float(x) for x in a]
        return cls(tuple(a[:-1]), a[-1])


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Revolute chain: per joint a fixed 4x4 link transform followed by a rotation
    about ``axes[i]`` (joint frame)."""

    fixed: np.ndarray
    axes: np.ndarray
    limits: np.ndarray
    flange: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        lim = np.asarray(self.limits, dtype=float).reshape(-1, 2)
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise ValueError("joint limits must satisfy min < max")
        object.__setattr__(self, "limits", lim)
        object.__setattr__(self, "fixed", np.asarray(self.fixed, dtype=float).reshape(-1, 4, 4))
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=float).reshape(-1, 3))

    @property
    def dof(self) -> int:
        return self.axes.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self.limits[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.limits[:, 1]

    def within_limits(self, angles, tol: float = 1e-12) -> bool:
        q = np.asarray(angles, dtype=float)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def reach(self) -> float:
        """Upper bound on base-to-end-effector distance."""
        r = sum(float(np.linalg.norm(T[:3, 3])) for T in self.fixed)
        return r + float(np.linalg.norm(self.flange[:3, 3]))


def mdh_link(a: float, d: float, alpha: float) -> np.ndarray:
    return rot_x(alpha) @ translation(a, 0.0, 0.0) @ translation(0.0, 0.0, d)


@lru_cache(maxsize=None)
def default_arm() -> ArmModel:
    fixed = np.stack([mdh_link(a, d, al) for a, d, al in PANDA_MDH])
    axes = np.tile([0.0, 0.0, 1.0], (7, 1))
    return ArmModel(fixed=fixed, axes=axes, limits=np.array(PANDA_LIMITS),
                    flange=translation(0.0, 0.0, PANDA_FLANGE))


def home_state() -> JointState:
    return JointState(PANDA_HOME, GRIPPER_OPEN)


def _base_matrix(base: Pose | None) -> np.ndarray:
    return np.eye(4) if base is None else base.matrix()


def _check(model: ArmModel, angles) -> np.ndarray:
    q = np.asarray(angles, dtype=float)
    if q.shape != (model.dof,):
        raise ValueError(f"expected {model.dof} joint angles, got {q.shape}")
    if not model.within_limits(q):
        raise OutOfLimits(f"joint angles {np.round(q, 4).tolist()} outside limits")
    return q


def chain_frames(model: ArmModel, angles, base: Pose | None = None) -> np.ndarray:
    """All frames: base, each joint frame, end effector; shape (dof + 2, 4, 4)."""
    q = np.asarray(angles, dtype=float)
    return _kernels.chain_frames(model.fixed, model.axes, q, _base_matrix(base), model.flange)


def forward_kinematics(model: ArmModel, state: JointState, base: Pose | None = None,
                       check_limits: bool = True):
    """Return ``(joint_positions, ee_pose)``.

    ``joint_positions`` has one row for the base followed by one per joint
    origin. ``check_limits=False`` evaluates configurations outside the limits,
    which is only meant for diagnostics.
    """
    q = _check(model, state.angles) if check_limits else np.asarray(state.angles, dtype=float)
    frames = chain_frames(model, q, base)
    return frames[:-1, :3, 3].copy(), Pose.from_matrix(frames[-1])


def link_points(model: ArmModel, angles, base: Pose | None = None) -> np.ndarray:
    """Base, joint origins and end-effector position, shape (dof + 2, 3)."""
    return chain_frames(model, angles, base)[:, :3, 3]


def jacobian(model: ArmModel, angles, base: Pose | None = None) -> np.ndarray:
    frames = chain_frames(model, angles, base)
    return _kernels.chain_jacobian(frames, model.axes)


def inverse_kinematics(model: ArmModel, target: Pose, q_init: JointState,
                       base: Pose | None = None) -> JointState:
    """Damped least squares, projected onto the joint limits every iteration."""
    T = target.matrix()
    if not np.all(np.isfinite(T)):
        raise ValueError("target pose is not finite")
    B = _base_matrix(base)
    if np.linalg.norm(T[:3, 3] - B[:3, 3]) > model.reach():
        raise Unreachable(f"target {np.round(T[:3, 3], 4).tolist()} beyond chain reach {model.reach():.3f} m")
    q0 = np.asarray(q_init.angles, dtype=float)
    q, _, pos_err, ang_err = _kernels.solve_ik(
        model.fixed, model.axes, B, model.flange, model.lower, model.upper, q0, T,
        IK_DAMPING, IK_STEP_CLAMP, IK_MAX_ITER, IK_POS_TOL * 0.01, IK_ANG_TOL * 0.01)
    if pos_err <= IK_POS_TOL and ang_err <= IK_ANG_TOL:
        return JointState(tuple(q), q_init.gripper)
    pinned = np.any(np.isclose(q, model.lower, atol=1e-9) | np.isclose(q, model.upper, atol=1e-9))
    msg = f"residual {pos_err:.2e} m / {ang_err:.2e} rad after {IK_MAX_ITER} iterations"
    if pinned:
        raise OutOfLimits("no in-limits solution: " + msg)
    raise Unreachable(msg)


def min_ticks(start: JointState, end: JointState) -> int:
    dq = np.max(np.abs(np.subtract(end.angles, start.angles)), initial=0.0)
    dg = abs(end.gripper - start.gripper)
    n = max(math.ceil(dq / MAX_JOINT_STEP - 1e-9), math.ceil(dg / MAX_GRIPPER_STEP - 1e-9))
    return max(int(n), 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped joint states of one agent.

    ``states`` rows are 8-vectors (angles + gripper). ``events`` holds
    ``(tick, kind, object_id, label)`` tuples, e.g. a grasp closing at a tick.
    """

    agent_id: int
    ticks: np.ndarray
    states: np.ndarray
    subgoal_id: str = ""
    kind: str = ""
    events: tuple = ()

    def __post_init__(self):
        ticks = np.asarray(self.ticks, dtype=np.int64)
        states = np.asarray(self.states, dtype=float).reshape(len(ticks), -1)
        if len(ticks) and np.any(np.diff(ticks) <= 0):
            raise ValueError("trajectory ticks must be strictly increasing")
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def samples(self):
        return [(int(t), JointState.from_array(s)) for t, s in zip(self.ticks, self.states)]

    @property
    def first_tick(self) -> int:
        return int(self.ticks[0])

    @property
    def last_tick(self) -> int:
        return int(self.ticks[-1])

    @property
    def final_state(self) -> JointState:
        return JointState.from_array(self.states[-1])

    def shifted(self, offset: int) -> "Trajectory":
        ev = tuple((e[0] + offset,) + tuple(e[1:]) for e in self.events)
        return Trajectory(self.agent_id, self.ticks + offset, self.states, self.subgoal_id, self.kind, ev)

    def max_step(self, start: JointState | None = None) -> float:
        s = self.states[:, :7]
        if start is not None:
            s = np.vstack([np.asarray(start.angles)[None, :], s])
        if len(s) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(s, axis=0))))

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "subgoal_id": self.subgoal_id,
            "kind": self.kind,
            "ticks": [int(t) for t in self.ticks],
            "states": [[float(x) for x in row] for row in self.states],
            "events": [list(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(d["agent_id"], np.array(d["ticks"], dtype=np.int64),
                   np.array(d["states"], dtype=float).reshape(len(d["ticks"]), 8),
                   d.get("subgoal_id", ""), d.get("kind", ""),
                   tuple(tuple(e) for e in d.get("events", [])))


def interpolate(start: JointState, end: JointState, ticks: int, agent_id: int = 0,
                model: ArmModel | None = None, subgoal_id: str = "", kind: str = "") -> Trajectory:
    """Linear joint-space segment of ``ticks`` samples ending exactly at ``end``.

    Sample ticks are 1..ticks relative to the starting state.
    """
    if ticks < 1:
        raise ValueError("ticks must be positive")
    if model is not None:
        _check(model, start.angles)
        _check(model, end.angles)
    need = min_ticks(start, end)
    if ticks < need and not (need == 1 and ticks == 1):
        raise TooFast(f"{ticks} ticks requested, at least {need} needed at {MAX_JOINT_STEP} rad/tick")
    a = start.as_array()
    b = end.as_array()
    frac = np.arange(1, ticks + 1, dtype=float) / ticks
    states = a[None, :] + frac[:, None] * (b - a)[None, :]
    states[-1] = b
    return Trajectory(agent_id, np.arange(1, ticks + 1), states, subgoal_id, kind)
