"""Grasp quality: the optimized objective and independent evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .kinematics import contact_frame, grasp_map


@dataclass(frozen=True)
class QualityWeights:
    """Weights of ``Q = w1 * Q_o + w2 * Q_h``.

    ``Q_h`` is non-positive, so a positive ``w2`` penalizes joints away
    from their range centers.  A negative ``w2`` rewards joints near their limits.
    """

    w1: float = 1.0
    w2: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.w1) and np.isfinite(self.w2)):
            raise ValueError("quality weights must be finite")


@dataclass(frozen=True)
class MetricReport:
    q_total: float
    q_object: float
    q_hand: float
    isotropy: float
    wrench_volume: float
    ferrari_canny: float

    def as_dict(self) -> dict:
        return asdict(self)


def q_object(contacts) -> float:
    """Twice the area of the contact triangle."""
    c = np.asarray(contacts, dtype=float).reshape(3, 3)
    return float(np.linalg.norm(np.cross(c[1] - c[0], c[2] - c[0])))


def grad_q_object(contacts) -> np.ndarray:
    """Gradient of :func:`q_object` w.r.t. the stacked contacts (9,)."""
    c = np.asarray(contacts, dtype=float).reshape(3, 3)
    n = np.cross(c[1] - c[0], c[2] - c[0])
    norm = np.linalg.norm(n)
    if norm < 1e-15:
        return np.zeros(9)
    u = n / norm
    return np.concatenate([np.cross(u, c[2] - c[1]), np.cross(u, c[0] - c[2]), np.cross(u, c[1] - c[0])])


def _split_limits(limits):
    lim = np.asarray(limits, dtype=float).reshape(-1, 2)
    return lim[:, 0], lim[:, 1]


def q_hand(q, limits) -> float:
    lo, hi = _split_limits(limits)
    z = (np.asarray(q, dtype=float) - 0.5 * (lo + hi)) / (hi - lo)
    return float(-0.5 * z @ z)


def grad_q_hand(q, limits) -> np.ndarray:
    lo, hi = _split_limits(limits)
    rng = hi - lo
    return -(np.asarray(q, dtype=float) - 0.5 * (lo + hi)) / (rng * rng)


def total_quality(contacts, q, limits, weights: QualityWeights) -> tuple:
    """``(Q, Q_o, Q_h)``."""
    qo = q_object(contacts)
    qh = q_hand(q, limits)
    return weights.w1 * qo + weights.w2 * qh, qo, qh


def grasp_isotropy(G) -> float:
    s = np.linalg.svd(np.asarray(G, dtype=float), compute_uv=False)
    if s[0] <= 0:
        return 0.0
    return float(s[-1] / s[0]) if len(s) >= 6 else 0.0


def wrench_volume(G) -> float:
    G = np.asarray(G, dtype=float)
    det = np.linalg.det(G @ G.T)
    # G G^T is PSD; a negative determinant is round-off
    return float(np.sqrt(det)) if det > 0 else 0.0


def primitive_wrenches(contacts, normals, mu: float = 0.5, m_edges: int = 8) -> np.ndarray:
    """Wrenches of the discretized friction-cone edges, shape (k * m_edges, 6).

    Each edge force has unit normal component (inward) plus ``mu`` times a
    unit tangential direction; torques are scaled by ``1 / max |c_i|``.
    """
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    if m_edges < 3:
        raise ValueError("need at least 3 cone edges")
    c = np.atleast_2d(np.asarray(contacts, dtype=float))
    n = np.atleast_2d(np.asarray(normals, dtype=float))
    rmax = np.linalg.norm(c, axis=1).max()
    scale = 1.0 / rmax if rmax > 0 else 1.0
    ang = 2 * np.pi * np.arange(m_edges) / m_edges
    out = []
    for ci, ni in zip(c, n):
        R = contact_frame(ni)
        f = R[:, 2][None, :] + mu * (np.cos(ang)[:, None] * R[:, 0] + np.sin(ang)[:, None] * R[:, 1])
        out.append(np.hstack([f, scale * np.cross(ci, f)]))
    return np.vstack(out)


def ferrari_canny(contacts, normals, mu: float = 0.5, m_edges: int = 8) -> float:
    """Radius of the largest origin-centered ball inside the wrench hull."""
    W = primitive_wrenches(contacts, normals, mu, m_edges)
    if np.linalg.matrix_rank(W - W.mean(axis=0), tol=1e-10) < 6:
        return 0.0
    try:
        hull = ConvexHull(W)
    except QhullError:
        return 0.0
    # hull.equations: unit outward normal a, offset b, interior a.x + b <= 0
    dist = -hull.equations[:, -1]
    return float(max(dist.min(), 0.0))


def metric_report(contacts, normals, q, limits, weights: QualityWeights, mu: float = 0.5, m_edges: int = 8) -> MetricReport:
    """All quality figures for one grasp; contacts/normals in the object frame."""
    contacts = np.asarray(contacts, dtype=float)
    total, qo, qh = total_quality(contacts, q, limits, weights)
    G = grasp_map(contacts, normals)
    return MetricReport(
        q_total=float(total),
        q_object=qo,
        q_hand=qh,
        isotropy=grasp_isotropy(G),
        wrench_volume=wrench_volume(G),
        ferrari_canny=ferrari_canny(contacts, normals, mu, m_edges),
    )
