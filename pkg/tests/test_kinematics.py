import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fingersplit.kinematics import (
    DegenerateContactError,
    HandModel,
    Joint,
    JointChain,
    Pose,
    Twist,
    contact_frame,
    fingertip_normals,
    fingertip_positions,
    grasp_map,
    hand_from_dict,
    hand_jacobian,
    hat,
    jacobian_q2c,
    link_frames,
    rodrigues,
    se3_exp,
)

vec3 = arrays(float, 3, elements=st.floats(-1, 1))
unit3 = vec3.filter(lambda v: np.linalg.norm(v) > 1e-2).map(lambda v: v / np.linalg.norm(v))


def twist_matrix(xi):
    T = np.zeros((4, 4))
    T[:3, :3] = hat(xi[3:])
    T[:3, 3] = xi[:3]
    return T


@settings(max_examples=100, deadline=None)
@given(arrays(float, 6, elements=st.floats(-3, 3)), st.floats(0, 1))
def test_se3_exp_matches_matrix_exponential(xi, dt):
    g = Pose(rodrigues(np.array([0.0, 0.6, 0.8]), 0.4), [0.1, -0.2, 0.3])
    out = se3_exp(g, Twist.from_vector(xi), dt)
    expect = g.as_matrix() @ scipy.linalg.expm(twist_matrix(xi) * dt)
    assert np.allclose(out.as_matrix(), expect, atol=1e-9)


def test_se3_exp_small_angle_branch():
    xi = np.array([0.1, 0.0, 0.0, 1e-10, 0.0, 0.0])
    out = se3_exp(Pose(), Twist.from_vector(xi), 1.0)
    assert np.allclose(out.as_matrix(), scipy.linalg.expm(twist_matrix(xi)), atol=1e-12)
    with pytest.raises(ValueError):
        se3_exp(Pose(), Twist.from_vector(xi), -1.0)


@settings(max_examples=50, deadline=None)
@given(unit3, st.floats(-np.pi, np.pi), vec3, arrays(float, (4, 3), elements=st.floats(-1, 1)))
def test_pose_inverse_and_compose(axis, angle, t, pts):
    g = Pose(rodrigues(axis, angle), t)
    assert np.allclose((g @ g.inverse()).as_matrix(), np.eye(4), atol=1e-12)
    assert np.allclose(g.inverse().apply(g.apply(pts)), pts, atol=1e-12)
    assert np.allclose(Pose.from_matrix(g.as_matrix()).as_matrix(), g.as_matrix())


def test_twist_rejects_nonfinite():
    with pytest.raises(ValueError):
        Twist([np.nan, 0, 0], [0, 0, 0])


def planar_finger(lengths=(0.1, 0.05)):
    joints = [Joint([0, 1, 0], [0, 0, 0], -3, 3), Joint([0, 1, 0], [0, 0, lengths[0]], -3, 3)]
    return JointChain(joints, [0, 0, lengths[1]], [1, 0, 0])


def test_planar_chain_forward_kinematics():
    hand = HandModel((planar_finger(),))
    a, b = 0.3, -0.7
    tip = fingertip_positions(hand, Pose(), [a, b])[0]
    # rotation about +y takes z toward +x
    expect = [0.1 * np.sin(a) + 0.05 * np.sin(a + b), 0, 0.1 * np.cos(a) + 0.05 * np.cos(a + b)]
    assert np.allclose(tip, expect)
    n = fingertip_normals(hand, Pose(), [a, b])[0]
    assert np.allclose(n, [np.cos(a + b), 0, -np.sin(a + b)])


def test_default_hand_layout(hand):
    assert hand.n_fingers == 3 and hand.n_joints == 8
    assert [f.n_joints for f in hand.fingers] == [3, 3, 2]
    assert np.all(hand.lower < hand.upper)
    assert np.allclose(hand.clamp(hand.upper + 1), hand.upper)
    wide = hand.with_limits(hand.lower - 1, hand.upper + 1)
    assert np.allclose(wide.lower, hand.lower - 1)


def test_jacobian_is_block_diagonal(hand, rng):
    J = jacobian_q2c(hand, Pose(), rng.uniform(hand.lower, hand.upper))
    for i, sl in enumerate(hand.slices):
        mask = np.ones(hand.n_joints, bool)
        mask[sl] = False
        assert np.all(J[3 * i : 3 * i + 3, mask] == 0)


def test_fk_is_palm_equivariant(hand, rng):
    q = rng.uniform(hand.lower, hand.upper)
    palm = Pose(rodrigues(np.array([1.0, 0, 0]), 0.7), [0.1, 0.2, 0.3])
    assert np.allclose(fingertip_positions(hand, palm, q), palm.apply(fingertip_positions(hand, Pose(), q)))
    assert np.allclose(jacobian_q2c(hand, palm, q)[:3], palm.rotation @ jacobian_q2c(hand, Pose(), q)[:3])
    assert set(link_frames(hand, palm, q)) >= {(-1, -1), (0, 0), (2, 1)}


@settings(max_examples=100, deadline=None)
@given(unit3)
def test_contact_frame_is_orthonormal_with_inward_z(n):
    R = contact_frame(n)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    assert np.allclose(R[:, 2], -n)


def test_contact_frame_zero_normal():
    with pytest.raises(DegenerateContactError):
        contact_frame([0, 0, 0])


def test_grasp_map_full_rank_for_triangle():
    c = np.array([[0.04, 0, 0], [-0.02, 0.035, 0], [-0.02, -0.035, 0]])
    G = grasp_map(c, c / np.linalg.norm(c, axis=1, keepdims=True))
    assert G.shape == (6, 9)
    assert np.linalg.matrix_rank(G) == 6


def test_grasp_map_net_force_is_inward_sum():
    c = np.array([[0.04, 0, 0], [-0.04, 0, 0], [0, 0.04, 0]])
    n = c / 0.04
    f_local = np.tile([0.0, 0.0, 1.0], 3)  # unit normal push at each contact
    w = grasp_map(c, n) @ f_local
    assert np.allclose(w[:3], -n.sum(axis=0))
    assert np.allclose(w[3:], 0)


def test_hand_jacobian_object_rotation_consistency(hand, rng):
    q = rng.uniform(hand.lower, hand.upper)
    n_obj = rng.normal(size=(3, 3))
    n_obj /= np.linalg.norm(n_obj, axis=1, keepdims=True)
    R = rodrigues(np.array([0.0, 0.0, 1.0]), 1.1)
    J_h = hand_jacobian(hand, Pose(), q, n_obj, R)
    J = jacobian_q2c(hand, Pose(), q)
    for i in range(3):
        Rc = R @ contact_frame(n_obj[i])
        assert np.allclose(J_h[3 * i : 3 * i + 3], Rc.T @ J[3 * i : 3 * i + 3])
    # identity rotation reduces to the plain form
    assert np.allclose(hand_jacobian(hand, Pose(), q, n_obj, np.eye(3)), hand_jacobian(hand, Pose(), q, n_obj))


def test_hand_config_validation(hand):
    base = {
        "dof": 3,
        "fingers": [
            {"joints": [{"axis": [0, 1, 0], "origin": [0, 0, 0], "limits": [0, 1]}],
             "fingertip_offset": [0, 0, 0.05], "fingertip_normal": [1, 0, 0]}
        ],
    }
    with pytest.raises(ValueError):
        hand_from_dict(base)
    base["dof"] = 1
    assert hand_from_dict(base).n_joints == 1
    with pytest.raises(ValueError):
        Joint([0, 0, 0], [0, 0, 0], 0, 1)
    with pytest.raises(ValueError):
        Joint([0, 0, 1], [0, 0, 0], 1, 0)
