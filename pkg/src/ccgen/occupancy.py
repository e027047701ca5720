"""Voxel occupancy of arms (link capsules) and objects (posed boxes)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels._loops import KEY_OFFSET
from .geometry import posed_box

VOXEL_SIZE = 0.05  # m
LINK_RADIUS = 0.06  # m

_MASK = (1 << 21) - 1


def unpack_keys(keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((len(keys), 3), dtype=np.int64)
    out[:, 0] = (keys >> 42) - KEY_OFFSET
    out[:, 1] = ((keys >> 21) & _MASK) - KEY_OFFSET
    out[:, 2] = (keys & _MASK) - KEY_OFFSET
    return out


def pack_index(i: int, j: int, k: int) -> int:
    return ((i + KEY_OFFSET) << 42) | ((j + KEY_OFFSET) << 21) | (k + KEY_OFFSET)


def voxel_index(p, voxel: float = VOXEL_SIZE) -> tuple[int, int, int]:
    return tuple(int(v) for v in np.floor(np.asarray(p, dtype=float) / voxel))


def capsule_voxels(p0, p1, radius: float = LINK_RADIUS, voxel: float = VOXEL_SIZE) -> np.ndarray:
    """Sorted packed keys of voxels touching the capsules ``p0[i] -> p1[i]``."""
    p0 = np.ascontiguousarray(np.atleast_2d(p0), dtype=float)
    p1 = np.ascontiguousarray(np.atleast_2d(p1), dtype=float)
    return _kernels.capsule_keys(p0, p1, float(radius), float(voxel))


def chain_voxels(points, radius: float = LINK_RADIUS, voxel: float = VOXEL_SIZE) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return capsule_voxels(pts[:-1], pts[1:], radius, voxel)


def box_voxels(centers, rots, halves, voxel: float = VOXEL_SIZE) -> np.ndarray:
    c = np.ascontiguousarray(np.atleast_2d(centers), dtype=float)
    R = np.ascontiguousarray(np.asarray(rots, dtype=float).reshape(-1, 3, 3))
    h = np.ascontiguousarray(np.atleast_2d(halves), dtype=float)
    return _kernels.obb_keys(c, R, h, float(voxel))


def object_voxels(obj, voxel: float = VOXEL_SIZE) -> np.ndarray:
    parts = [posed_box(obj.pose, b) for b in obj.asset.shape]
    return box_voxels([p[0] for p in parts], [p[1] for p in parts], [p[2] for p in parts], voxel)


@dataclass
class OccupancyGrid:
    """Voxel index -> owner tags. Tags are ``("agent", id)`` or ``("object", id)``."""

    voxel_size: float = VOXEL_SIZE
    occupied: dict = field(default_factory=dict)

    def add(self, keys, tag) -> None:
        for idx in unpack_keys(keys).tolist():
            self.occupied.setdefault(tuple(idx), set()).add(tag)

    def owners(self, index) -> set:
        return self.occupied.get(tuple(index), set())

    def voxels_of(self, tag) -> set:
        return {idx for idx, tags in self.occupied.items() if tag in tags}

    def summary_hash(self) -> str:
        h = hashlib.sha1()
        for idx in sorted(self.occupied):
            h.update(repr((idx, sorted(self.occupied[idx]))).encode())
        return h.hexdigest()[:16]
