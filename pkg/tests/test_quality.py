from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fingersplit.kinematics import grasp_map, rodrigues
from fingersplit.quality import (
    QualityWeights,
    ferrari_canny,
    grad_q_hand,
    grad_q_object,
    grasp_isotropy,
    metric_report,
    primitive_wrenches,
    q_hand,
    q_object,
    total_quality,
    wrench_volume,
)

contacts9 = arrays(float, 9, elements=st.floats(-0.1, 0.1))
TRIANGLE = np.array([[0.04, 0, 0], [-0.02, 0.0346, 0], [-0.02, -0.0346, 0]])


def fd_grad(f, x, h=1e-7):
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])


@settings(max_examples=100, deadline=None)
@given(contacts9)
def test_grad_q_object_finite_difference(c):
    assume(q_object(c) > 1e-4)
    assert np.allclose(grad_q_object(c), fd_grad(q_object, c), rtol=1e-4, atol=1e-7)


@settings(max_examples=50, deadline=None)
@given(contacts9, arrays(float, 3, elements=st.floats(-1, 1)), st.floats(-3, 3))
def test_q_object_rigid_invariance(c, t, angle):
    R = rodrigues(np.array([0.3, 0.4, 0.5]) / np.linalg.norm([0.3, 0.4, 0.5]), angle)
    moved = c.reshape(3, 3) @ R.T + t
    assert np.isclose(q_object(moved), q_object(c), atol=1e-12)


def test_q_object_degenerate_gradient_is_zero():
    c = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    assert q_object(c) == 0
    assert np.all(grad_q_object(c) == 0)


def test_q_object_is_twice_area():
    c = np.array([[0, 0, 0], [3, 0, 0], [0, 4, 0]], dtype=float)
    assert np.isclose(q_object(c), 12.0)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 8, elements=st.floats(0, 1)))
def test_q_hand_sign_and_gradient(u):
    lims = np.column_stack([np.linspace(-1, 0, 8), np.linspace(1, 3, 8)])
    q = lims[:, 0] + u * (lims[:, 1] - lims[:, 0])
    assert q_hand(q, lims) <= 0
    assert np.allclose(grad_q_hand(q, lims), fd_grad(lambda x: q_hand(x, lims), q), atol=1e-8)
    assert q_hand(lims.mean(axis=1), lims) == 0


def test_total_quality_weights():
    lims = np.array([[0, 1]] * 8, dtype=float)
    q = np.full(8, 0.9)
    Q, qo, qh = total_quality(TRIANGLE, q, lims, QualityWeights(2.0, 0.5))
    assert np.isclose(Q, 2 * qo + 0.5 * qh)
    with pytest.raises(ValueError):
        QualityWeights(np.inf, 0.0)


def test_isotropy_and_volume_against_eigenvalues(rng):
    for _ in range(20):
        G = rng.normal(size=(6, 9))
        ev = np.linalg.eigvalsh(G @ G.T)
        assert np.isclose(grasp_isotropy(G), np.sqrt(ev.min() / ev.max()))
        assert np.isclose(wrench_volume(G), np.sqrt(np.prod(ev)))
    G = np.zeros((6, 9))
    G[:3, :3] = np.eye(3)
    assert wrench_volume(G) == 0
    assert grasp_isotropy(G) == 0


def facet_oracle(W, tol=1e-9):
    """Smallest distance from the origin to a supporting hyperplane of the hull.

    Enumerates every 6-subset of wrenches, keeps the affinely independent
    ones whose hyperplane leaves all points on one side, and returns the
    minimum offset; 0 if the origin is outside or on the boundary.
    """
    best = np.inf
    for idx in combinations(range(len(W)), 6):
        P = W[list(idx)]
        D = P[1:] - P[0]
        _, s, Vt = np.linalg.svd(D)
        if s[-1] < 1e-10:
            continue
        a = Vt[-1]
        b = a @ P[0]
        side = W @ a - b
        if side.max() <= tol:
            pass
        elif side.min() >= -tol:
            a, b = -a, -b
        else:
            continue
        # outward normal a, interior a.x <= b; origin distance is b
        best = min(best, b)
    return max(best, 0.0)


def test_ferrari_canny_facet_oracle(rng):
    checked = 0
    for _ in range(15):
        c = rng.normal(scale=0.04, size=(3, 3))
        n = c / np.linalg.norm(c, axis=1, keepdims=True)
        n = n + rng.normal(scale=0.2, size=(3, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        W = primitive_wrenches(c, n, 0.5, 4)
        fc = ferrari_canny(c, n, 0.5, 4)
        assert np.isclose(fc, facet_oracle(W), atol=1e-9)
        checked += fc > 0
    assert checked > 0


def test_ferrari_canny_zero_for_two_contacts():
    c = np.array([[0.04, 0, 0], [-0.04, 0, 0]])
    assert ferrari_canny(c, c / 0.04) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.01, 0.5))
def test_ferrari_canny_monotone_in_friction(mu, extra):
    n = TRIANGLE / np.linalg.norm(TRIANGLE, axis=1, keepdims=True)
    n = n + np.array([0, 0, 0.3])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    assert ferrari_canny(TRIANGLE, n, mu + extra) >= ferrari_canny(TRIANGLE, n, mu) - 1e-12


def test_primitive_wrenches_shape_and_validation():
    n = TRIANGLE / np.linalg.norm(TRIANGLE, axis=1, keepdims=True)
    W = primitive_wrenches(TRIANGLE, n, 0.5, 8)
    assert W.shape == (24, 6)
    # every edge force has unit inward normal component
    assert np.allclose(-(W[:8, :3] @ n[0]), 1.0)
    with pytest.raises(ValueError):
        primitive_wrenches(TRIANGLE, n, 0.0)
    with pytest.raises(ValueError):
        primitive_wrenches(TRIANGLE, n, 0.5, 2)


def test_metric_report_fields():
    n = TRIANGLE / np.linalg.norm(TRIANGLE, axis=1, keepdims=True)
    lims = np.array([[0, 1]] * 8, dtype=float)
    rep = metric_report(TRIANGLE, n, np.full(8, 0.5), lims, QualityWeights())
    d = rep.as_dict()
    assert set(d) == {"q_total", "q_object", "q_hand", "isotropy", "wrench_volume", "ferrari_canny"}
    assert np.isclose(rep.isotropy, grasp_isotropy(grasp_map(TRIANGLE, n)))
    assert rep.q_hand == 0 and rep.ferrari_canny > 0
