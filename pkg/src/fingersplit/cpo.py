"""Contact point optimization at a fixed palm pose.

Each iteration projects the quality gradient onto the tangent space of the
surface and kinematic constraints, snaps the displaced contacts to the
nearest mesh vertices, and takes one stiffness-controller step of the
joints toward them.  Non-improving candidates end the run and are rejected.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collision import CollisionProxy, col_detect
from .kinematics import GraspState, HandModel, Pose, fingertip_normals, fingertip_positions, jacobian_q2c
from .quality import QualityWeights, grad_q_hand, grad_q_object, total_quality
from .surface import SurfaceModel

log = logging.getLogger(__name__)

STATIONARY_TOL = 1e-12
ZERO_PROGRESS = 1e-12
ALIGNMENT_PREDICATES = ("misalignment", "paper_literal")


class StationaryPoint(Exception):
    """The projected gradient vanished; no ascent direction exists."""


@dataclass(frozen=True)
class CpoParams:
    sigma: float = 0.15
    gain: float = 2.0
    delta: float = 0.0
    gamma: float = 0.6
    max_iters: int = 50
    dt: float = 0.05
    line_search: bool = False
    ls_samples: int = 10
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
class PhaseTiming:
    """Accumulated wall time in seconds."""

    tangent: float = 0.0
    projection: float = 0.0
    collision: float = 0.0

    def add(self, other: "PhaseTiming") -> None:
        self.tangent += other.tangent
        self.projection += other.projection
        self.collision += other.collision

    @property
    def total(self) -> float:
        return self.tangent + self.projection + self.collision


@dataclass(frozen=True)
class TraceRow:
    phase: str
    iteration: int
    q_total: float
    q_object: float
    q_hand: float
    contacts: np.ndarray
    residual: float = 0.0
    outer: int = 0


@dataclass
class CpoOutcome:
    state: GraspState
    iterations: int
    reason: str
    trace: list = field(default_factory=list)
    timing: PhaseTiming = field(default_factory=PhaseTiming)


def alignment_stop(surface_normals, finger_normals, gamma: float, predicate: str = "misalignment") -> bool:
    """Normal-alignment stop test over all fingers.

    ``misalignment`` stops when some ``|n_s . n_f| < gamma`` (the pad no
    longer faces the surface); ``paper_literal`` stops when some
    ``|n_s . n_f| >= gamma``.
    """
    dots = np.abs(np.einsum("ij,ij->i", np.asarray(surface_normals), np.asarray(finger_normals)))
    if predicate == "misalignment":
        return bool(np.any(dots < gamma))
    return bool(np.any(dots >= gamma))


def constraint_matrix(normals, J) -> np.ndarray:
    """``A = [[n(c)^T, 0], [-I, J]]`` for stacked contacts and joints."""
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    k = len(normals)
    nj = J.shape[1]
    A = np.zeros((k + 3 * k, 3 * k + nj))
    for i, n in enumerate(normals):
        A[i, 3 * i : 3 * i + 3] = n
    A[k:, : 3 * k] = -np.eye(3 * k)
    A[k:, 3 * k :] = J
    return A


def tangent_direction(grad_x, normals, J) -> np.ndarray:
    """Orthogonal projection of ``grad_x`` onto ``null(A)``.

    The row space of ``A`` comes from an SVD, which stays well defined when
    parallel contact normals make ``A`` rank deficient.
    """
    A = constraint_matrix(normals, J)
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = max(A.shape) * np.finfo(float).eps * s[0]
    rows = Vt[s > tol]
    grad_x = np.asarray(grad_x, dtype=float)
    return grad_x - rows.T @ (rows @ grad_x)


def tangent_residual(d, normals, J) -> float:
    """Relative residual ``|A d| / |d|`` of a tangent step."""
    nd = np.linalg.norm(d)
    if nd == 0:
        return 0.0
    return float(np.linalg.norm(constraint_matrix(normals, J) @ d) / nd)


def cpo_tangent_step(grad_c, grad_q, J, normals, sigma: float) -> tuple:
    """Trust-region step ``d* = sigma * d0 / |d0|``; returns ``(d_c, d_q)``.

    Raises :class:`StationaryPoint` when ``|d0| < 1e-12``.
    """
    grad_c = np.asarray(grad_c, dtype=float)
    d0 = tangent_direction(np.concatenate([grad_c, np.asarray(grad_q, dtype=float)]), normals, J)
    nd = np.linalg.norm(d0)
    if nd < STATIONARY_TOL:
        raise StationaryPoint
    d = (sigma / nd) * d0
    return d[: grad_c.size], d[grad_c.size :]


def limit_locked_step(step, J, grad_q, q, lower, upper, tol: float = 1e-12):
    """Run ``step(J, grad_q)`` with saturated joints removed.

    A joint at a limit whose step would push it further out is locked:
    its Jacobian column and gradient entry are zeroed and the step is
    recomputed, until no locked candidate remains.  ``step`` must return a
    tuple whose last element is the joint direction.  Returns
    ``(result, locked_mask)``.
    """
    q = np.asarray(q, dtype=float)
    at_lo = q <= np.asarray(lower) + 1e-12
    at_hi = q >= np.asarray(upper) - 1e-12
    locked = np.zeros(q.size, dtype=bool)
    J = np.asarray(J, dtype=float)
    g = np.asarray(grad_q, dtype=float)
    for _ in range(q.size + 1):
        Jm = J.copy()
        Jm[:, locked] = 0.0
        gm = np.where(locked, 0.0, g)
        out = step(Jm, gm)
        d_q = out[-1]
        push = ((at_lo & (d_q < -tol)) | (at_hi & (d_q > tol))) & ~locked
        if not push.any():
            return out, locked
        locked |= push
    return out, locked


def track_joints(hand: HandModel, palm: Pose, q, task_velocity) -> np.ndarray:
    """Joint velocity realizing a stacked fingertip velocity, finger by finger.

    Uses the exact pseudo-inverse when a block is well conditioned and a
    damped least-squares inverse (damping 1e-6) near singularities.
    """
    J = jacobian_q2c(hand, palm, q)
    v = np.asarray(task_velocity, dtype=float)
    qdot = np.zeros(hand.n_joints)
    for i, sl in enumerate(hand.slices):
        Ji = J[3 * i : 3 * i + 3, sl]
        vi = v[3 * i : 3 * i + 3]
        s = np.linalg.svd(Ji, compute_uv=False)
        if s[-1] > 1e-3 * s[0]:
            qdot[sl] = np.linalg.lstsq(Ji, vi, rcond=None)[0]
        else:
            log.debug("finger %d Jacobian near singular (cond %.3g); damping", i, s[0] / max(s[-1], 1e-300))
            qdot[sl] = np.linalg.solve(Ji.T @ Ji + 1e-6 * np.eye(Ji.shape[1]), Ji.T @ vi)
    return qdot


def cpo_project(state: GraspState, d_c, params: CpoParams, surface: SurfaceModel, hand: HandModel) -> GraspState:
    """Snap ``c + d_c`` to the surface and take one tracking step toward it."""
    palm = state.palm_in_object
    c = state.contact_positions
    f = fingertip_positions(hand, palm, state.q)
    c_ref = surface.vertices[surface.nearest_ids(c + np.asarray(d_c).reshape(-1, 3))]
    K = params.gain_matrix(c.size)
    qdot = track_joints(hand, palm, state.q, K @ (c_ref - f).ravel())
    q_des = hand.clamp(state.q + qdot * params.dt)
    ids = surface.nearest_ids(fingertip_positions(hand, palm, q_des))
    return state.replace(q=q_des, contacts=tuple(surface.point(i) for i in ids))


def _gradient(state: GraspState, hand: HandModel, weights: QualityWeights):
    return (
        weights.w1 * grad_q_object(state.contact_positions),
        weights.w2 * grad_q_hand(state.q, hand.limits),
    )


def run_cpo(
    state: GraspState,
    params: CpoParams,
    surface: SurfaceModel,
    hand: HandModel,
    proxy: Optional[CollisionProxy] = None,
    weights: QualityWeights = QualityWeights(),
    clearance: float = 0.0,
    pad_tolerance: float = 1e-3,
) -> CpoOutcome:
    """Iterate tangent search and projection until a stop condition fires."""
    timing = PhaseTiming()
    limits = hand.limits
    Q, qo, qh = total_quality(state.contact_positions, state.q, limits, weights)
    trace = [TraceRow("CPO", 0, Q, qo, qh, state.contact_positions)]
    reason = "max_iters"
    stalls = 0
    it = 0
    while it < params.max_iters:
        it += 1
        palm = state.palm_in_object

        t0 = time.perf_counter()
        J = jacobian_q2c(hand, palm, state.q)
        normals = state.contact_normals
        grad_c, grad_q = _gradient(state, hand, weights)
        try:
            (d_c, d_q), locked = limit_locked_step(
                lambda Jm, gq: cpo_tangent_step(grad_c, gq, Jm, normals, params.sigma),
                J, grad_q, state.q, hand.lower, hand.upper,
            )
        except StationaryPoint:
            timing.tangent += time.perf_counter() - t0
            reason = "quality_converged"
            break
        J[:, locked] = 0.0
        residual = tangent_residual(np.concatenate([d_c, d_q]), normals, J)
        t1 = time.perf_counter()
        timing.tangent += t1 - t0

        if params.line_search:
            best = None
            for k in range(1, params.ls_samples + 1):
                alpha = k / params.ls_samples
                cand = cpo_project(state, alpha * d_c, params, surface, hand)
                Qc = total_quality(cand.contact_positions, cand.q, limits, weights)
                if best is None or Qc[0] > best[1][0]:
                    best = (cand, Qc)
            cand, (Qd, qod, qhd) = best
        else:
            cand = cpo_project(state, d_c, params, surface, hand)
            Qd, qod, qhd = total_quality(cand.contact_positions, cand.q, limits, weights)
        dQ = Qd - Q
        stop = dQ <= params.delta
        if not stop:
            nf = fingertip_normals(hand, palm, cand.q)
            stop = alignment_stop(cand.contact_normals, nf, params.gamma, params.alignment_predicate)
            if stop:
                reason = "normal_limit"
        else:
            reason = "quality_converged"
        t2 = time.perf_counter()
        timing.projection += t2 - t1

        if stop:
            break
        if proxy is not None and col_detect(hand, palm, cand.q, proxy, clearance, pad_tolerance):
            timing.collision += time.perf_counter() - t2
            reason = "collision"
            break
        timing.collision += time.perf_counter() - t2

        state, Q = cand, Qd
        trace.append(TraceRow("CPO", it, Qd, qod, qhd, cand.contact_positions, residual))
        stalls = stalls + 1 if dQ <= ZERO_PROGRESS else 0
        if stalls >= params.stall_steps:
            reason = "quality_converged"
            break
    return CpoOutcome(state, it, reason, trace, timing)
