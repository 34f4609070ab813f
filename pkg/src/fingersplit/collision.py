"""Point-set vs. link-primitive collision test used as a stop condition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kinematics import HandModel, Pose, link_frames

DEFAULT_PAD_TOLERANCE = 1e-3

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class CollisionPrimitive:
    """Box or capsule rigidly attached to a link frame.

    ``dims`` is ``(hx, hy, hz)`` half-extents for a box and
    ``(radius, half_length)`` for a capsule whose axis is the local z-axis.
    ``pad`` names the surface touching the object: a box face (e.g.
    ``"+x"``) is pulled inward by the pad tolerance during checks, and
    ``"radial"`` shrinks a capsule radius by the same amount.
    """

    kind: str
    local_pose: Pose
    dims: tuple
    attached_link: tuple
    pad: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("box", "capsule"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        expected = 3 if self.kind == "box" else 2
        if len(self.dims) != expected:
            raise ValueError(f"{self.kind} needs {expected} dimensions, got {len(self.dims)}")
        if min(self.dims) <= 0:
            raise ValueError("primitive dimensions must be positive")
        if self.pad is not None:
            ok = self.pad == "radial" if self.kind == "capsule" else self.pad[:1] in ("+", "-") and self.pad[1:] in _AXES
            if not ok:
                raise ValueError(f"invalid pad {self.pad!r} for a {self.kind}")

    def capsule_radius(self, pad_tolerance: float) -> float:
        radius = float(self.dims[0])
        if self.pad is not None:
            radius -= min(pad_tolerance, radius - 1e-9)
        return radius

    def box_extents(self, pad_tolerance: float):
        """(center, half_extents) in the primitive frame after pad shrinking."""
        center = np.zeros(3)
        half = np.array(self.dims, dtype=float)
        if self.pad is not None:
            ax = _AXES[self.pad[1:]]
            shrink = min(pad_tolerance, 2 * half[ax] - 1e-9)
            half[ax] -= 0.5 * shrink
            center[ax] -= np.copysign(0.5 * shrink, 1.0 if self.pad[0] == "+" else -1.0)
        return center, half


@dataclass(frozen=True)
class CollisionProxy:
    points: np.ndarray
    source_cell: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError("collision proxy must contain at least one point")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)


def primitives(hand: HandModel):
    yield from hand.palm_links
    for finger in hand.fingers:
        yield from finger.links


def primitive_world_poses(hand: HandModel, palm: Pose, q):
    frames = link_frames(hand, palm, q)
    return [(prim, frames[prim.attached_link] @ prim.local_pose) for prim in primitives(hand)]


def _inside_box(local, center, half, clearance):
    d = np.maximum(np.abs(local - center) - half, 0.0)
    return np.einsum("ij,ij->i", d, d) <= clearance * clearance


def _inside_capsule(local, radius, half_length, clearance):
    z = np.clip(local[:, 2], -half_length, half_length)
    d = local.copy()
    d[:, 2] -= z
    r = radius + clearance
    return np.einsum("ij,ij->i", d, d) <= r * r


def _world_aabb(prim: CollisionPrimitive, pose: Pose, pad_tolerance: float):
    if prim.kind == "box":
        center, half = prim.box_extents(pad_tolerance)
        c = pose.apply(center)
        ext = np.abs(pose.rotation) @ half
    else:
        radius, hl = prim.capsule_radius(pad_tolerance), prim.dims[1]
        c = pose.translation
        ext = np.abs(pose.rotation[:, 2]) * hl + radius
    return c - ext, c + ext


def col_detect(
    hand: HandModel,
    palm: Pose,
    q,
    proxy: CollisionProxy,
    clearance: float = 0.0,
    pad_tolerance: float = DEFAULT_PAD_TOLERANCE,
) -> bool:
    """True iff a proxy point lies inside any link primitive.

    ``palm`` and ``proxy.points`` must share a frame.  Primitives are
    inflated by ``clearance``; pad faces are shrunk by ``pad_tolerance`` so
    intended fingertip contacts do not register.
    """
    pts = proxy.points
    for prim, pose in primitive_world_poses(hand, palm, q):
        lo, hi = _world_aabb(prim, pose, pad_tolerance)
        mask = np.all((pts >= lo - clearance) & (pts <= hi + clearance), axis=1)
        if not mask.any():
            continue
        local = (pts[mask] - pose.translation) @ pose.rotation
        if prim.kind == "box":
            center, half = prim.box_extents(pad_tolerance)
            hit = _inside_box(local, center, half, clearance)
        else:
            hit = _inside_capsule(local, prim.capsule_radius(pad_tolerance), prim.dims[1], clearance)
        if hit.any():
            return True
    return False
