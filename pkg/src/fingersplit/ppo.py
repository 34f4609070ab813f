"""Palm pose optimization with the contacts held fixed on the object.

The palm is treated as static and the object is moved instead; the caller
inverts the resulting object pose to obtain the palm motion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .collision import CollisionProxy, col_detect
from .cpo import (
    ALIGNMENT_PREDICATES,
    PhaseTiming,
    StationaryPoint,
    TraceRow,
    alignment_stop,
    limit_locked_step,
    track_joints,
)
from .kinematics import HandModel, Pose, Twist, fingertip_normals, fingertip_positions, grasp_map, hand_jacobian, se3_exp
from .quality import QualityWeights, grad_q_hand, total_quality
from .surface import SurfaceModel

STATIONARY_TOL = 1e-12
ZERO_PROGRESS = 1e-12


@dataclass(frozen=True)
class PpoParams:
    sigma: float = 0.5
    gain: float = 2.0
    delta: float = 0.0
    gamma: float = 0.6
    max_iters: int = 50
    dt: float = 0.05
    alignment_predicate: str = "misalignment"
    stall_steps: int = 3

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.alignment_predicate not in ALIGNMENT_PREDICATES:
            raise ValueError(f"alignment_predicate must be one of {ALIGNMENT_PREDICATES}")

    def gain_matrix(self, n: int = 9) -> np.ndarray:
        K = np.asarray(self.gain, dtype=float)
        return K * np.eye(n) if K.ndim == 0 else K


@dataclass
class PpoOutcome:
    object_pose_in_palm: Pose
    q: np.ndarray
    iterations: int
    reason: str
    trace: list = field(default_factory=list)
    timing: PhaseTiming = field(default_factory=PhaseTiming)


def ppo_directions(G, J_h, grad_q) -> tuple:
    """Object twist direction ``d_c`` and joint direction ``d_q``.

    Both come from projecting ``(0, grad_q)`` onto the solution set of
    ``G^T V = J_h qdot``; ``M = G^T G + J_h J_h^T`` is Cholesky-factored and
    damped by 1e-10 if that fails.
    """
    G = np.asarray(G, dtype=float)
    J_h = np.asarray(J_h, dtype=float)
    g = np.asarray(grad_q, dtype=float)
    M = G.T @ G + J_h @ J_h.T
    rhs = J_h @ g
    try:
        y = scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), rhs)
    except np.linalg.LinAlgError:
        y = np.linalg.solve(M + 1e-10 * np.eye(len(M)), rhs)
    return G @ y, g - J_h.T @ y


def ppo_tangent_step(G, J_h, grad_q, sigma: float) -> tuple:
    """``(V_des, d_q, d_c)`` with ``V_des = sigma * d_c / |d_q|``.

    Raises :class:`StationaryPoint` when ``|d_q| < 1e-12``.
    """
    d_c, d_q = ppo_directions(G, J_h, grad_q)
    n = np.linalg.norm(d_q)
    if n < STATIONARY_TOL:
        raise StationaryPoint
    return Twist.from_vector(sigma * d_c / n), d_q, d_c


def _reordered(step):
    V, d_q, d_c = step
    return V, d_c, d_q


def grasp_constraint_residual(G, J_h, d_c, d_q) -> float:
    scale = np.linalg.norm(d_c) + np.linalg.norm(d_q)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(G.T @ d_c - J_h @ d_q) / scale)


def ppo_project(g_po: Pose, V: Twist, q, contacts_obj, params: PpoParams, hand: HandModel) -> tuple:
    """Advance the object pose by ``V`` and track the moved contacts.

    Returns ``(g_po_des, q_des)``.  Contact targets and feed-forward
    velocities are taken from the updated pose.
    """
    c = np.asarray(contacts_obj, dtype=float).reshape(-1, 3)
    g_des = se3_exp(g_po, V, params.dt)
    c_p = g_des.apply(c)
    v_p = (V.linear - np.cross(c, V.angular)) @ g_des.rotation.T
    palm = Pose()
    f_p = fingertip_positions(hand, palm, q)
    K = params.gain_matrix(c.size)
    qdot = track_joints(hand, palm, q, v_p.ravel() + K @ (c_p - f_p).ravel())
    return g_des, hand.clamp(np.asarray(q) + qdot * params.dt)


def run_ppo(
    g_po: Pose,
    q,
    contacts,
    params: PpoParams,
    surface: Optional[SurfaceModel],
    hand: HandModel,
    proxy: Optional[CollisionProxy] = None,
    weights: QualityWeights = QualityWeights(),
    clearance: float = 0.0,
    pad_tolerance: float = 1e-3,
) -> PpoOutcome:
    """Move the object relative to the palm to center the joints.

    ``contacts`` are object-frame :class:`SurfacePoint` objects and are never
    modified.  ``surface`` is accepted for interface symmetry with the
    contact optimizer; it is not queried.
    """
    timing = PhaseTiming()
    limits = hand.limits
    c_obj = np.array([c.position for c in contacts])
    n_obj = np.array([c.normal for c in contacts])
    G = grasp_map(c_obj, n_obj)
    q = np.array(q, dtype=float)
    Q, qo, qh = total_quality(c_obj, q, limits, weights)
    trace = [TraceRow("PPO", 0, Q, qo, qh, c_obj)]
    palm = Pose()
    reason = "max_iters"
    stalls = 0
    it = 0
    while it < params.max_iters:
        it += 1
        t0 = time.perf_counter()
        J_h = hand_jacobian(hand, palm, q, n_obj, g_po.rotation)
        try:
            (V, d_c, d_q), locked = limit_locked_step(
                lambda Jm, gq: _reordered(ppo_tangent_step(G, Jm, gq, params.sigma)),
                J_h, weights.w2 * grad_q_hand(q, limits), q, hand.lower, hand.upper,
            )
        except StationaryPoint:
            timing.tangent += time.perf_counter() - t0
            reason = "quality_converged"
            break
        J_h[:, locked] = 0.0
        residual = grasp_constraint_residual(G, J_h, d_c, d_q)
        t1 = time.perf_counter()
        timing.tangent += t1 - t0

        g_des, q_des = ppo_project(g_po, V, q, c_obj, params, hand)
        Qd, qod, qhd = total_quality(c_obj, q_des, limits, weights)
        dQ = Qd - Q
        if dQ <= params.delta:
            reason = "quality_converged"
            timing.projection += time.perf_counter() - t1
            break
        nf = fingertip_normals(hand, palm, q_des)
        if alignment_stop(n_obj @ g_des.rotation.T, nf, params.gamma, params.alignment_predicate):
            reason = "normal_limit"
            timing.projection += time.perf_counter() - t1
            break
        t2 = time.perf_counter()
        timing.projection += t2 - t1

        if proxy is not None and col_detect(hand, g_des.inverse(), q_des, proxy, clearance, pad_tolerance):
            timing.collision += time.perf_counter() - t2
            reason = "collision"
            break
        timing.collision += time.perf_counter() - t2

        g_po, q, Q = g_des, q_des, Qd
        trace.append(TraceRow("PPO", it, Qd, qod, qhd, c_obj, residual))
        stalls = stalls + 1 if dQ <= ZERO_PROGRESS else 0
        if stalls >= params.stall_steps:
            reason = "quality_converged"
            break
    return PpoOutcome(g_po, q, it, reason, trace, timing)
