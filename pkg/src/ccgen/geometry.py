"""Poses and boxes shared by the scene, kinematics and checker."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .transforms import invert_matrix, make_matrix, matrix_to_quat, quat_normalize, quat_to_matrix


def _vec3(v) -> tuple[float, float, float]:
    a = tuple(float(x) for x in v)
    if len(a) != 3:
        raise ValueError(f"expected a 3-vector, got {v!r}")
    return a


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion orientation (w, x, y, z)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        q = tuple(float(x) for x in self.orientation)
        if len(q) != 4 or abs(math.sqrt(sum(x * x for x in q)) - 1.0) > 1e-9:
            raise ValueError(f"orientation {q} is not a unit quaternion")
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(tuple(T[:3, 3]), tuple(matrix_to_quat(T[:3, :3])))

    @classmethod
    def from_quat(cls, position, quat) -> "Pose":
        return cls(tuple(position), tuple(quat_normalize(quat)))

    def matrix(self) -> np.ndarray:
        return make_matrix(self.position, self.orientation)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Pose":
        return Pose.from_matrix(invert_matrix(self.matrix()))

    def transform_point(self, p) -> np.ndarray:
        return self.rotation() @ np.asarray(p, dtype=float) + np.asarray(self.position)

    def transform_direction(self, d) -> np.ndarray:
        return self.rotation() @ np.asarray(d, dtype=float)

    def translated(self, delta) -> "Pose":
        return Pose(tuple(np.asarray(self.position) + np.asarray(delta, dtype=float)), self.orientation)

    def to_list(self) -> list[float]:
        return list(self.position) + list(self.orientation)

    @classmethod
    def from_list(cls, v) -> "Pose":
        return cls(tuple(v[:3]), tuple(v[3:7]))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in its own frame (asset frame or world)."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "half_extents", _vec3(self.half_extents))
        if min(self.half_extents) <= 0.0:
            raise ValueError(f"half extents must be strictly positive, got {self.half_extents}")

    @property
    def lower(self) -> np.ndarray:
        return np.subtract(self.center, self.half_extents)

    @property
    def upper(self) -> np.ndarray:
        return np.add(self.center, self.half_extents)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return np.asarray(self.center) + signs * np.asarray(self.half_extents)

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents)}


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")


def posed_box(pose: Pose, box: Box):
    """World OBB of an asset-frame box: (center, rotation, half extents)."""
    R = pose.rotation()
    return R @ np.asarray(box.center) + np.asarray(pose.position), R, np.asarray(box.half_extents)


def world_aabb(pose: Pose, box: Box) -> tuple[np.ndarray, np.ndarray]:
    c, R, h = posed_box(pose, box)
    ext = np.abs(R) @ h
    return c - ext, c + ext
