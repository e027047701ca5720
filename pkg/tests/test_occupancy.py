from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccgen import _kernels
from ccgen.occupancy import (LINK_RADIUS, VOXEL_SIZE, OccupancyGrid, box_voxels, capsule_voxels,
                             pack_index, unpack_keys, voxel_index)
from ccgen.transforms import quat_to_matrix

SAMPLE = 0.01


def keyset(keys) -> set:
    return {tuple(v) for v in unpack_keys(keys).tolist()}


def capsule_samples(p0, p1, r):
    """Grid points at SAMPLE spacing that lie inside the capsule."""
    lo = np.minimum(p0, p1) - r
    hi = np.maximum(p0, p1) + r
    axes = [np.arange(lo[i], hi[i] + SAMPLE, SAMPLE) for i in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    d = p1 - p0
    L2 = float(d @ d)
    t = np.clip(((g - p0) @ d) / L2, 0, 1) if L2 > 0 else np.zeros(len(g))
    dist = np.linalg.norm(g - (p0 + t[:, None] * d), axis=1)
    return g[dist <= r]


def box_samples(c, R, h):
    axes = [np.arange(-h[i], h[i] + 1e-12, SAMPLE) for i in range(3)]
    axes = [np.unique(np.append(a, h[i])) for i, a in enumerate(axes)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    return g @ R.T + c


def sample_voxels(points) -> set:
    return {tuple(v) for v in np.floor(points / VOXEL_SIZE).astype(int).tolist()}


def test_pack_round_trip():
    idx = np.array([[0, 0, 0], [-3, 7, 12], [1000, -1000, 5]])
    keys = np.array([pack_index(*i) for i in idx])
    assert np.array_equal(unpack_keys(keys), idx)


def test_voxel_index_floors_negative():
    assert voxel_index((-0.01, 0.0, 0.049)) == (-1, 0, 0)


def test_zero_length_capsule_is_sphere():
    got = keyset(capsule_voxels(np.zeros(3), np.zeros(3), 0.06))
    # radius 0.06 at a voxel corner: the inner 2x2x2 block plus face neighbours
    # (0.05 away); edge and corner neighbours sit at 0.071 and 0.087
    outer = {-2, 1}
    want = {(i, j, k) for i in range(-2, 2) for j in range(-2, 2) for k in range(-2, 2)
            if sum(c in outer for c in (i, j, k)) <= 1}
    assert got == want


def test_capsule_not_wildly_conservative():
    p0, p1 = np.array([0.0, 0.0, 0.0]), np.array([0.3, 0.0, 0.0])
    got = unpack_keys(capsule_voxels(p0, p1))
    centres = (got + 0.5) * VOXEL_SIZE
    t = np.clip(centres[:, 0] / 0.3, 0, 1)
    dist = np.linalg.norm(centres - np.outer(t, p1), axis=1)
    # every reported voxel's centre lies within radius + half a voxel diagonal
    assert np.all(dist <= LINK_RADIUS + VOXEL_SIZE * np.sqrt(3) / 2 + 1e-9)


def test_zero_false_negatives_random_shapes():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        p0 = rng.uniform(-0.5, 0.5, 3)
        p1 = p0 + rng.uniform(-0.3, 0.3, 3)
        r = rng.uniform(0.01, 0.1)
        missing = sample_voxels(capsule_samples(p0, p1, r)) - keyset(capsule_voxels(p0, p1, r))
        assert not missing
    for _ in range(100):
        c = rng.uniform(-0.5, 0.5, 3)
        q = rng.normal(size=4)
        R = quat_to_matrix(q / np.linalg.norm(q))
        h = rng.uniform(0.01, 0.15, 3)
        missing = sample_voxels(box_samples(c, R, h)) - keyset(box_voxels(c, R, h))
        assert not missing


@given(st.lists(st.floats(-0.4, 0.4), min_size=6, max_size=6), st.floats(0.005, 0.12))
def test_capsule_contains_endpoints_and_is_symmetric(coords, r):
    p0, p1 = np.array(coords[:3]), np.array(coords[3:])
    a = capsule_voxels(p0, p1, r)
    assert np.array_equal(a, capsule_voxels(p1, p0, r))
    got = keyset(a)
    assert voxel_index(p0) in got and voxel_index(p1) in got
    assert np.all(np.diff(a) > 0)  # sorted, unique


@given(st.floats(0.01, 0.2), st.floats(0.01, 0.2), st.floats(0.01, 0.2), st.floats(-np.pi, np.pi))
def test_box_yaw_covers_corners(hx, hy, hz, yaw):
    c = np.array([0.13, -0.07, 0.21])
    R = quat_to_matrix(np.array([np.cos(yaw / 2), 0, 0, np.sin(yaw / 2)]))
    h = np.array([hx, hy, hz])
    got = keyset(box_voxels(c, R, h))
    signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
    for s in signs:
        assert voxel_index(c + R @ (s * h)) in got


def test_backends_produce_identical_keys():
    ref = _kernels.numpy_kernels()
    rng = np.random.default_rng(9)
    p0 = rng.uniform(-0.5, 0.5, (40, 3))
    p1 = p0 + rng.uniform(-0.2, 0.2, (40, 3))
    assert np.array_equal(_kernels.capsule_keys(p0, p1, 0.06, 0.05), ref.capsule_keys(p0, p1, 0.06, 0.05, _kernels.GOLDEN_ITERS))
    c = rng.uniform(-0.5, 0.5, (10, 3))
    R = np.repeat(np.eye(3)[None], 10, 0)
    h = rng.uniform(0.01, 0.1, (10, 3))
    assert np.array_equal(_kernels.obb_keys(c, R, h, 0.05), ref.obb_keys(c, R, h, 0.05))


def test_grid_owners_and_hash():
    g = OccupancyGrid()
    g.add(capsule_voxels([0, 0, 0], [0.1, 0, 0]), ("agent", 1))
    g.add(box_voxels([0.05, 0, 0], np.eye(3), [0.02, 0.02, 0.02]), ("object", "cube"))
    shared = g.voxels_of(("agent", 1)) & g.voxels_of(("object", "cube"))
    assert shared
    assert g.owners(next(iter(shared))) == {("agent", 1), ("object", "cube")}
    h = OccupancyGrid()
    h.add(box_voxels([0.05, 0, 0], np.eye(3), [0.02, 0.02, 0.02]), ("object", "cube"))
    h.add(capsule_voxels([0, 0, 0], [0.1, 0, 0]), ("agent", 1))
    assert g.summary_hash() == h.summary_hash()


@pytest.mark.parametrize("voxel", [0.02, 0.05, 0.1])
def test_voxel_size_parameter(voxel):
    keys = capsule_voxels([0, 0, 0], [0.2, 0, 0], 0.03, voxel)
    idx = unpack_keys(keys)
    assert idx[:, 0].max() == int(np.floor((0.2 + 0.03) / voxel))
