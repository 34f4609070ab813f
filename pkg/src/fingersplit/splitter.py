"""Alternating contact/palm optimization starting from a parallel grasp."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collision import CollisionProxy, col_detect
from .cpo import CpoParams, PhaseTiming, run_cpo, track_joints
from .kinematics import GraspState, HandModel, Pose, fingertip_normals, fingertip_positions, jacobian_q2c
from .ppo import PpoParams, run_ppo
from .quality import MetricReport, QualityWeights, metric_report
from .surface import SurfaceModel, downsample

log = logging.getLogger(__name__)


class InfeasibleGraspError(ValueError):
    """The parallel grasp cannot be mapped onto the hand."""


class SeedingError(RuntimeError):
    """No antipodal vertex pair satisfies the friction-cone test."""


@dataclass(frozen=True)
class ParallelGrasp:
    c1: np.ndarray
    c2: np.ndarray
    v_ap: np.ndarray

    def __post_init__(self):
        c1 = np.asarray(self.c1, dtype=float).reshape(3)
        c2 = np.asarray(self.c2, dtype=float).reshape(3)
        v = np.asarray(self.v_ap, dtype=float).reshape(3)
        if np.allclose(c1, c2):
            raise ValueError("parallel grasp contacts must differ")
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("approach vector must be non-zero")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)
        object.__setattr__(self, "v_ap", v / n)


@dataclass(frozen=True)
class SplitterParams:
    m: int = 2
    max_outer: int = 20
    cpo: CpoParams = field(default_factory=CpoParams)
    ppo: PpoParams = field(default_factory=PpoParams)
    weights: QualityWeights = field(default_factory=QualityWeights)
    mu: float = 0.5
    m_edges: int = 8
    pad_split: float = 0.005
    contact_tolerance: float = 1e-3
    clearance: float = 0.0
    proxy_cell_fraction: float = 0.02
    map_steps: int = 100

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass
class PlanResult:
    final: GraspState
    initial: GraspState
    outer_iterations: int
    cpo_iterations: list
    ppo_iterations: list
    trace: list
    reason: str
    metrics_before: MetricReport
    metrics_after: MetricReport
    timing: dict
    phase_reasons: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def accepted_q(self) -> np.ndarray:
        return np.array([row.q_total for row in self.trace])


def make_proxy(surface: SurfaceModel, fraction: float = 0.02) -> CollisionProxy:
    cell = fraction * surface.bbox_diagonal
    return CollisionProxy(downsample(surface, cell), cell)


def max_span(hand: HandModel, samples: int = 13, min_alignment: float = 0.6) -> float:
    """Largest opposed thumb-to-finger fingertip distance.

    Every non-thumb finger is paired with the thumb (the last finger) over a
    joint grid spanning each finger's limits.  A pose pair counts when both
    fingertips lie above the palm plane and each fingertip normal points
    toward the other fingertip with cosine at least ``min_alignment``.
    """
    palm = Pose()
    clouds = []
    for chain in hand.fingers:
        grids = np.meshgrid(*[np.linspace(j.lower, j.upper, samples) for j in chain.joints], indexing="ij")
        qs = np.column_stack([g.ravel() for g in grids])
        single = HandModel((chain,))
        pts = np.array([fingertip_positions(single, palm, qc)[0] for qc in qs])
        nrm = np.array([fingertip_normals(single, palm, qc)[0] for qc in qs])
        clouds.append((pts, nrm))
    thumb_p, thumb_n = clouds[-1]
    best = 0.0
    for p, n in clouds[:-1]:
        diff = p[None, :, :] - thumb_p[:, None, :]
        d = np.linalg.norm(diff, axis=-1)
        u = diff / np.maximum(d, 1e-12)[..., None]
        facing = (np.einsum("ik,ijk->ij", thumb_n, u) >= min_alignment) & (np.einsum("jk,ijk->ij", n, u) <= -min_alignment)
        facing &= (thumb_p[:, 2][:, None] > 0) & (p[:, 2][None, :] > 0)
        d[~facing] = 0.0
        best = max(best, float(d.max()))
    return best


def grasp_frame(g: ParallelGrasp) -> np.ndarray:
    """Palm rotation: z along the approach vector, x toward ``c2``."""
    z = g.v_ap
    axis = g.c2 - g.c1
    x = axis - (axis @ z) * z
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise InfeasibleGraspError("approach vector is parallel to the grasp axis")
    x /= n
    return np.column_stack([x, np.cross(z, x), z])


def _initial_joints(hand: HandModel) -> np.ndarray:
    """Spread joints centered, flexion joints a quarter into their range.

    The partial flex keeps planar chains off the straight-arm singularity.
    """
    q = hand.lower + 0.25 * (hand.upper - hand.lower)
    for chain, sl in zip(hand.fingers, hand.slices):
        if chain.n_joints > 2:
            q[sl.start] = hand.midpoints[sl.start]
    return q


def _solve_active_set(J, v, q, hand: HandModel, damping: float = 1e-8) -> np.ndarray:
    n = hand.n_joints
    at_lo = q <= hand.lower + 1e-12
    at_hi = q >= hand.upper - 1e-12
    free = np.ones(J.shape[1], dtype=bool)
    x = np.zeros(J.shape[1])
    for _ in range(n + 1):
        Jf = J[:, free]
        x[:] = 0.0
        x[free] = np.linalg.solve(Jf.T @ Jf + damping * np.eye(Jf.shape[1]), Jf.T @ v)
        push = np.zeros(J.shape[1], dtype=bool)
        push[:n] = (at_lo & (x[:n] < 0)) | (at_hi & (x[:n] > 0))
        if not push.any():
            break
        free &= ~push
    return x


def track_to_targets(hand: HandModel, palm: Pose, q0, targets, gain: float, dt: float, steps: int,
                     move_palm: bool = False) -> tuple:
    """Repeated stiffness-controller steps toward fixed fingertip targets.

    With ``move_palm`` the palm translation joins the joints as unknowns of
    one stacked least-squares solve (fingertip velocity ``J qdot + tdot``
    for every finger).  Returns ``(palm, q, max_residual)``.
    """
    q = np.array(q0, dtype=float)
    targets = np.asarray(targets, dtype=float)
    k = len(targets)
    for _ in range(steps):
        err = targets - fingertip_positions(hand, palm, q)
        if np.abs(err).max() < 1e-9:
            break
        v = gain * err.ravel()
        if move_palm:
            J = np.hstack([jacobian_q2c(hand, palm, q), np.tile(np.eye(3), (k, 1))])
            x = _solve_active_set(J, v, q, hand)
            q = hand.clamp(q + x[: hand.n_joints] * dt)
            palm = Pose(palm.rotation, palm.translation + x[hand.n_joints :] * dt)
        else:
            q = hand.clamp(q + track_joints(hand, palm, q, v) * dt)
    residual = float(np.linalg.norm(targets - fingertip_positions(hand, palm, q), axis=1).max())
    return palm, q, residual


def map_parallel_grasp(
    g: ParallelGrasp,
    surface: SurfaceModel,
    hand: HandModel,
    params: SplitterParams = SplitterParams(),
    proxy: Optional[CollisionProxy] = None,
    span: Optional[float] = None,
    standoffs=None,
) -> GraspState:
    """Place the palm over a parallel grasp and close the fingers on it.

    Fingers 1 and 2 straddle ``c1`` (offset by ``pad_split`` along the palm
    y-axis), the last finger goes to ``c2``.  The palm orientation is fixed
    by the grasp; its position is tracked together with the joints from a
    few starting standoffs along the approach axis, stopping at the first
    start that ends collision-free within ``10 * contact_tolerance``;
    otherwise the smallest residual (preferring collision-free) is kept.
    """
    span = max_span(hand) if span is None else span
    dist = float(np.linalg.norm(g.c2 - g.c1))
    if dist > span:
        raise InfeasibleGraspError(f"contact distance {dist:.4f} m exceeds hand span {span:.4f} m")
    R = grasp_frame(g)
    y = R[:, 1]
    d = params.pad_split
    raw = np.array([g.c1 + d * y, g.c1 - d * y, g.c2])
    targets = surface.vertices[surface.nearest_ids(raw)]
    mid = 0.5 * (g.c1 + g.c2)
    q0 = _initial_joints(hand)
    if standoffs is None:
        h0 = float(fingertip_positions(hand, Pose(), q0)[:, 2].mean())
        standoffs = h0 + np.array([0.0, 0.03, 0.06, -0.02])
    if proxy is None:
        proxy = make_proxy(surface, params.proxy_cell_fraction)
    tol = 10 * params.contact_tolerance

    candidates = []
    for h in standoffs:
        palm0 = Pose(R, mid - h * g.v_ap)
        palm, q, res = track_to_targets(hand, palm0, q0, targets, params.cpo.gain, params.cpo.dt, params.map_steps,
                                        move_palm=True)
        collides = col_detect(hand, palm, q, proxy, params.clearance, params.contact_tolerance)
        cids = surface.nearest_ids(fingertip_positions(hand, palm, q))
        candidates.append((collides, res, palm, q, cids))
        if not collides and res <= tol:
            break

    pick = candidates[-1]
    if pick[0] or pick[1] > tol:
        free = [c for c in candidates if not c[0]]
        pick = min(free or candidates, key=lambda c: c[1])
        log.warning("map: tracking residual %.4f m exceeds %.4f m%s", pick[1], tol, "" if free else " (in collision)")
    _, _, palm, q, cids = pick
    return GraspState(palm, q, tuple(surface.point(i) for i in cids))


def _perpendicular_basis(axis) -> tuple:
    a = axis / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ a) * a
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


def seed_antipodal(
    surface: SurfaceModel,
    n_samples: int = 256,
    mu: float = 0.5,
    seed: int = 0,
    span: float = np.inf,
    n_directions: int = 36,
    standoff: float = 0.08,
) -> ParallelGrasp:
    """Widest antipodal vertex pair (within ``span``) among sampled seeds.

    A pair qualifies when each outward normal lies within the friction cone
    around the direction pointing away from the other contact.  The approach
    vector is the direction perpendicular to the grasp axis whose palm point
    at ``standoff`` is farthest from the mesh.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    V, N = surface.vertices, surface.vertex_normals
    cos_cone = np.cos(np.arctan(mu))
    seeds = np.sort(rng.choice(len(V), size=min(n_samples, len(V)), replace=False))
    best = (-1.0, None, None)
    for i in seeds:
        d = V - V[i]
        dist = np.linalg.norm(d, axis=1)
        dist[i] = np.inf
        u = d / dist[:, None]
        ok = (-(u @ N[i]) >= cos_cone) & (np.einsum("ij,ij->i", u, N) >= cos_cone) & (dist <= span)
        if not ok.any():
            continue
        j = int(np.flatnonzero(ok)[np.argmax(dist[ok])])
        if dist[j] > best[0]:
            best = (float(dist[j]), int(i), j)
    if best[1] is None:
        raise SeedingError("no antipodal pair found")
    c1, c2 = V[best[1]], V[best[2]]
    e1, e2 = _perpendicular_basis(c2 - c1)
    mid = 0.5 * (c1 + c2)
    center = 0.5 * (surface.bbox[0] + surface.bbox[1])
    scored = []
    for k in range(n_directions):
        th = 2 * np.pi * k / n_directions
        v = np.cos(th) * e1 + np.sin(th) * e2
        p = mid - standoff * v
        clearance, _ = surface.spatial_index.query(p)
        scored.append((-round(float(clearance), 9), -float(np.linalg.norm(p - center)), k, v))
    v_ap = min(scored, key=lambda s: s[:3])[3]
    return ParallelGrasp(c1.copy(), c2.copy(), v_ap)


def _report(state: GraspState, hand: HandModel, params: SplitterParams) -> MetricReport:
    return metric_report(
        state.contact_positions, state.contact_normals, state.q, hand.limits, params.weights, params.mu, params.m_edges
    )


def run_split(
    g: ParallelGrasp,
    surface: SurfaceModel,
    hand: HandModel,
    params: SplitterParams = SplitterParams(),
    proxy: Optional[CollisionProxy] = None,
    initial: Optional[GraspState] = None,
    span: Optional[float] = None,
) -> PlanResult:
    """Map the parallel grasp, then alternate CPO and PPO until both stall."""
    t_start = time.perf_counter()
    if proxy is None:
        proxy = make_proxy(surface, params.proxy_cell_fraction)
    state = map_parallel_grasp(g, surface, hand, params, proxy, span=span) if initial is None else initial
    t_map = time.perf_counter() - t_start
    initial_state = state
    before = _report(state, hand, params)

    trace, cpo_its, ppo_its, reasons = [], [], [], []
    cpo_t, ppo_t = PhaseTiming(), PhaseTiming()
    cpo_wall = ppo_wall = 0.0
    reason, error = "max_outer", None
    outer = 0
    try:
        while outer < params.max_outer:
            outer += 1
            t0 = time.perf_counter()
            co = run_cpo(state, params.cpo, surface, hand, proxy, params.weights, params.clearance, params.contact_tolerance)
            cpo_wall += time.perf_counter() - t0
            cpo_t.add(co.timing)
            state = co.state
            cpo_its.append(co.iterations)
            trace.extend(_tag(co.trace, outer, skip_first=bool(trace)))

            t0 = time.perf_counter()
            g_po = state.palm_in_object.inverse()
            po = run_ppo(g_po, state.q, state.contacts, params.ppo, surface, hand, proxy, params.weights,
                         params.clearance, params.contact_tolerance)
            ppo_wall += time.perf_counter() - t0
            ppo_t.add(po.timing)
            # palm in object frame is the inverse of the object pose in palm frame
            state = state.replace(palm=state.object_pose @ po.object_pose_in_palm.inverse(), q=po.q)
            ppo_its.append(po.iterations)
            trace.extend(_tag(po.trace, outer, skip_first=True))
            reasons.append((co.reason, po.reason))

            if co.iterations < params.m and po.iterations < params.m:
                reason = "converged"
                break
    except Exception as exc:  # noqa: BLE001 - the last valid state is still reported
        log.exception("planner phase failed")
        reason, error = "error", f"{type(exc).__name__}: {exc}"

    after = _report(state, hand, params)
    timing = {
        "map_ms": 1e3 * t_map,
        "cpo_ms": 1e3 * cpo_wall,
        "ppo_ms": 1e3 * ppo_wall,
        "tangent_ms": 1e3 * (cpo_t.tangent + ppo_t.tangent),
        "projection_ms": 1e3 * (cpo_t.projection + ppo_t.projection),
        "collision_ms": 1e3 * (cpo_t.collision + ppo_t.collision),
        "cpo_tangent_ms": 1e3 * cpo_t.tangent,
        "cpo_projection_ms": 1e3 * cpo_t.projection,
        "cpo_collision_ms": 1e3 * cpo_t.collision,
        "ppo_tangent_ms": 1e3 * ppo_t.tangent,
        "ppo_projection_ms": 1e3 * ppo_t.projection,
        "ppo_collision_ms": 1e3 * ppo_t.collision,
        "total_ms": 1e3 * (time.perf_counter() - t_start),
    }
    return PlanResult(
        final=state,
        initial=initial_state,
        outer_iterations=outer,
        cpo_iterations=cpo_its,
        ppo_iterations=ppo_its,
        trace=trace,
        reason=reason,
        metrics_before=before,
        metrics_after=after,
        timing=timing,
        phase_reasons=reasons,
        error=error,
    )


def _tag(rows, outer: int, skip_first: bool) -> list:
    # each phase's first row repeats the previous phase's last accepted state
    from dataclasses import replace

    rows = rows[1:] if skip_first else rows
    return [replace(r, outer=outer) for r in rows]
