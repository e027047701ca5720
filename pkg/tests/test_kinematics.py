from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccgen import _kernels
from ccgen.errors import OutOfLimits, TooFast, Unreachable
from ccgen.geometry import Pose
from ccgen.kinematics import (MAX_JOINT_STEP, PANDA_FLANGE, PANDA_MDH, ArmModel, JointState,
                              default_arm, forward_kinematics, interpolate, inverse_kinematics,
                              jacobian, link_points)
from ccgen.transforms import quat_angle

from helpers import base_pose, random_state


def craig_oracle(q, base=np.eye(4)):
    """Plain modified-DH product, written out independently of the package."""
    T = base.copy()
    pts = [T[:3, 3].copy()]
    for (a, d, alpha), th in zip(PANDA_MDH, q):
        ca, sa, ct, s = math.cos(alpha), math.sin(alpha), math.cos(th), math.sin(th)
        A = np.array([[ct, -s, 0.0, a],
                      [s * ca, ct * ca, -sa, -sa * d],
                      [s * sa, ct * sa, ca, ca * d],
                      [0.0, 0.0, 0.0, 1.0]])
        T = T @ A
        pts.append(T[:3, 3].copy())
    F = np.eye(4)
    F[2, 3] = PANDA_FLANGE
    T = T @ F
    return np.array(pts), T


def test_empty_chain_is_base_pose():
    model = ArmModel(np.zeros((0, 4, 4)), np.zeros((0, 3)), np.zeros((0, 2)))
    base = Pose((0.1, -0.2, 0.3), (math.cos(0.2), 0.0, 0.0, math.sin(0.2)))
    pts, ee = forward_kinematics(model, JointState((), 0.0), base)
    assert np.allclose(ee.position, base.position, atol=1e-12)
    assert quat_angle(ee.orientation, base.orientation) < 1e-9
    assert np.allclose(pts[0], base.position)


def test_zero_angles_match_closed_form():
    model = default_arm()
    q = np.zeros(7)
    q[3] = -0.1  # joint 4 excludes zero; stay just inside
    _, T = craig_oracle(q)
    _, ee = forward_kinematics(model, JointState(tuple(q), 0.0))
    assert np.allclose(ee.position, T[:3, 3], atol=1e-12)


def test_joint_one_by_pi_negates_xy():
    model = default_arm()
    q = np.array([0.0, 0.3, 0.0, -1.2, 0.0, 1.5, 0.0])
    _, a = forward_kinematics(model, JointState(tuple(q), 0.0))
    q[0] = math.pi - 1e-12
    with pytest.raises(OutOfLimits):  # pi lies beyond the joint-1 limit of the default arm
        forward_kinematics(model, JointState(tuple(q), 0.0))
    _, b = forward_kinematics(model, JointState(tuple(q), 0.0), check_limits=False)
    assert np.allclose(b.position[:2], -np.asarray(a.position[:2]), atol=1e-9)
    assert b.position[2] == pytest.approx(a.position[2], abs=1e-12)


def test_joint_positions_start_at_base():
    base = base_pose(0.55, 0.0)
    pts, _ = forward_kinematics(default_arm(), random_state(np.random.default_rng(1), default_arm()), base)
    assert pts.shape == (8, 3)
    assert np.allclose(pts[0], base.position)


def test_out_of_limits_rejected():
    q = list(default_arm().upper + 0.1)
    with pytest.raises(OutOfLimits):
        forward_kinematics(default_arm(), JointState(tuple(q), 0.0))


def test_fk_against_matrix_oracle_1000_states():
    model = default_arm()
    rng = np.random.default_rng(7)
    worst = 0.0
    base = base_pose(-0.55, 0.0)
    for _ in range(1000):
        q = random_state(rng, model)
        pts, ee = forward_kinematics(model, q, base)
        opts, T = craig_oracle(np.array(q.angles), base.matrix())
        worst = max(worst, float(np.max(np.abs(pts - opts[:8]))),
                    float(np.max(np.abs(np.asarray(ee.position) - T[:3, 3]))))
    assert worst <= 1e-9


def test_ik_round_trip_seeded_near_solution():
    model = default_arm()
    rng = np.random.default_rng(3)
    q0 = random_state(rng, model)
    _, target = forward_kinematics(model, q0)
    seed = JointState(tuple(np.clip(np.array(q0.angles) + 0.05, model.lower, model.upper)), q0.gripper)
    q = inverse_kinematics(model, target, seed)
    _, got = forward_kinematics(model, q)
    assert np.linalg.norm(np.subtract(got.position, target.position)) <= 1e-4
    assert quat_angle(got.orientation, target.orientation) <= 1e-3


def test_ik_far_target_unreachable():
    with pytest.raises(Unreachable):
        inverse_kinematics(default_arm(), Pose((10.0, 0.0, 0.0)), JointState((0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)))


def test_ik_solves_fk_sampled_targets():
    model = default_arm()
    rng = np.random.default_rng(11)
    solved = 0
    for _ in range(100):
        q = random_state(rng, model)
        _, target = forward_kinematics(model, q)
        start = JointState(tuple(np.clip(np.array(q.angles) + rng.normal(0, 0.3, 7), model.lower, model.upper)))
        try:
            got = inverse_kinematics(model, target, start)
        except (Unreachable, OutOfLimits):
            continue
        _, ee = forward_kinematics(model, got)
        solved += np.linalg.norm(np.subtract(ee.position, target.position)) <= 1e-4
    assert solved >= 99


def test_jacobian_matches_central_differences():
    model = default_arm()
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(20):
        q = np.array(random_state(rng, model).angles)
        J = jacobian(model, q)
        for i in range(7):
            dq = np.zeros(7)
            dq[i] = h
            p1 = link_points(model, q + dq)[-1]
            p0 = link_points(model, q - dq)[-1]
            assert np.max(np.abs((p1 - p0) / (2 * h) - J[:3, i])) <= 1e-5


def test_interpolate_identity():
    q = JointState((0.0, -0.5, 0.0, -2.0, 0.0, 1.5, 0.7))
    seg = interpolate(q, q, 5)
    assert len(seg) == 5
    assert np.all(seg.states == q.as_array())


def test_interpolate_linear_single_joint():
    a = JointState((0.0,) * 7)
    b = JointState((1.0,) + (0.0,) * 6)
    seg = interpolate(a, b, 20)
    assert seg.states[4, 0] == pytest.approx(0.25)
    assert seg.states[-1, 0] == 1.0
    with pytest.raises(TooFast):
        interpolate(a, b, 4)  # four ticks would need 0.25 rad/tick


def test_interpolate_too_fast_boundary():
    a = JointState((0.0,) * 7)
    b = JointState((0.5,) + (0.0,) * 6)
    need = math.ceil(0.5 / MAX_JOINT_STEP)
    interpolate(a, b, need)
    with pytest.raises(TooFast):
        interpolate(a, b, need - 1)


@given(st.lists(st.floats(-1.5, 1.5), min_size=7, max_size=7), st.integers(1, 80))
def test_interpolate_step_bound(delta, extra):
    a = JointState((0.0, 0.0, 0.0, -1.5, 0.0, 1.5, 0.0))
    b = JointState(tuple(np.add(a.angles, delta)))
    need = max(1, math.ceil(max(abs(d) for d in delta) / MAX_JOINT_STEP - 1e-9))
    seg = interpolate(a, b, need + extra)
    assert seg.max_step(a) <= MAX_JOINT_STEP + 1e-12
    assert np.array_equal(seg.states[-1], b.as_array())


def test_backends_agree():
    """The vectorised fallback computes the same frames as the active backend."""
    model = default_arm()
    ref = _kernels.numpy_kernels()
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = np.array(random_state(rng, model).angles)
        B = base_pose(0.0, 0.55).matrix()
        a = _kernels.chain_frames(model.fixed, model.axes, q, B, model.flange)
        b = ref.chain_frames(model.fixed, model.axes, q, B, model.flange)
        assert np.allclose(a, b, atol=1e-12)
        assert np.allclose(_kernels.chain_jacobian(a, model.axes), ref.chain_jacobian(b, model.axes), atol=1e-12)
