"""Rigid-body kinematics for serial-chain fingered hands.

Poses are (rotation, translation) pairs acting on column vectors,
``x_parent = R @ x_child + t``.  Twists are body twists ``(v, w)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .surface import SurfacePoint

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])


def hat(k):
    """Skew-symmetric cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )


def rodrigues(axis, theta):
    """Rotation by ``theta`` about the unit ``axis``."""
    K = hat(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def orthonormalize(R):
    """Nearest rotation matrix (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        """Transform a point (3,) or a point array (n, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def orthonormalized(self) -> "Pose":
        return Pose(orthonormalize(self.rotation), self.translation)


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3)
        ang = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def se3_exp(g: Pose, V: Twist, dt: float) -> Pose:
    """Right-multiply ``g`` by ``exp(V^ dt)`` for the body twist ``V``.

    The rotation uses Rodrigues' formula and the translation the usual
    left-Jacobian ("V matrix") of SO(3).  The result is re-orthonormalized.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    v = V.linear * dt
    w = V.angular * dt
    theta = float(np.linalg.norm(w))
    W = hat(w)
    W2 = W @ W
    if theta < 1e-8:
        # second-order series; the dropped terms are O(theta^3)
        R = np.eye(3) + W + 0.5 * W2
        Vm = np.eye(3) + 0.5 * W + W2 / 6.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        R = np.eye(3) + (s / theta) * W + ((1.0 - c) / theta**2) * W2
        Vm = np.eye(3) + ((1.0 - c) / theta**2) * W + ((theta - s) / theta**3) * W2
    step = Pose(R, Vm @ v)
    return (g @ step).orthonormalized()


# ---------------------------------------------------------------------------
# Hand model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Joint:
    """Revolute joint: ``T = Trans(origin) Rot(rotation) Rot(axis, q)``.

    ``rotation`` is a fixed offset applied before the joint motion, so the
    zero angle need not coincide with the parent frame orientation.
    """

    axis: np.ndarray
    origin: np.ndarray
    lower: float
    upper: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("joint axis must be non-zero")
        object.__setattr__(self, "axis", axis / n)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        if not self.lower < self.upper:
            raise ValueError(f"joint limits must satisfy lower < upper, got [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class JointChain:
    joints: tuple
    fingertip_offset: np.ndarray
    fingertip_normal: np.ndarray
    links: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "fingertip_offset", np.asarray(self.fingertip_offset, dtype=float))
        nf = np.asarray(self.fingertip_normal, dtype=float)
        object.__setattr__(self, "fingertip_normal", nf / np.linalg.norm(nf))

    @property
    def n_joints(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class HandModel:
    fingers: tuple
    palm_links: tuple = ()
    name: str = "hand"

    def __post_init__(self):
        object.__setattr__(self, "fingers", tuple(self.fingers))
        object.__setattr__(self, "palm_links", tuple(self.palm_links))
        sizes = [f.n_joints for f in self.fingers]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        object.__setattr__(self, "_slices", tuple(slice(a, b) for a, b in zip(starts[:-1], starts[1:])))
        lower = np.array([j.lower for f in self.fingers for j in f.joints])
        upper = np.array([j.upper for f in self.fingers for j in f.joints])
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_joints(self) -> int:
        return int(self.lower.size)

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    @property
    def slices(self) -> tuple:
        """Per-finger slices into the stacked joint vector."""
        return self._slices

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def limits(self) -> np.ndarray:
        return np.column_stack([self.lower, self.upper])

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def with_limits(self, lower, upper) -> "HandModel":
        """Copy of the hand with replaced joint limits."""
        fingers = []
        k = 0
        for f in self.fingers:
            joints = []
            for j in f.joints:
                joints.append(Joint(j.axis, j.origin, float(lower[k]), float(upper[k]), j.rotation))
                k += 1
            fingers.append(JointChain(joints, f.fingertip_offset, f.fingertip_normal, f.links, f.name))
        return HandModel(fingers, self.palm_links, self.name)


def _chain_frames(chain: JointChain, palm: Pose, q_chain):
    """World rotation/position of every joint frame of one finger, plus the tip.

    Returns ``(rotations, positions, axes, tip_rotation, tip_position)``
    where ``axes[j]`` is joint ``j``'s axis in world coordinates.
    """
    R = palm.rotation
    p = palm.translation
    rotations, positions, axes = [], [], []
    for joint, qj in zip(chain.joints, q_chain):
        p = p + R @ joint.origin
        R = R @ joint.rotation
        axes.append(R @ joint.axis)
        R = R @ rodrigues(joint.axis, qj)
        rotations.append(R)
        positions.append(p)
    tip = p + R @ chain.fingertip_offset
    return rotations, positions, axes, R, tip


def fk_fingertips(hand: HandModel, palm: Pose, q) -> list:
    """Fingertip frames (world), one :class:`Pose` per finger.

    The frame rotation is the distal link's rotation, so the fingertip
    normal in world coordinates is ``pose.rotation @ chain.fingertip_normal``.
    """
    q = np.asarray(q, dtype=float)
    frames = []
    for chain, sl in zip(hand.fingers, hand.slices):
        *_, R_tip, tip = _chain_frames(chain, palm, q[sl])
        frames.append(Pose(R_tip, tip))
    return frames


def fingertip_positions(hand: HandModel, palm: Pose, q) -> np.ndarray:
    return np.array([f.translation for f in fk_fingertips(hand, palm, q)])


def fingertip_normals(hand: HandModel, palm: Pose, q) -> np.ndarray:
    frames = fk_fingertips(hand, palm, q)
    return np.array([fr.rotation @ ch.fingertip_normal for fr, ch in zip(frames, hand.fingers)])


def finger_jacobian(chain: JointChain, palm: Pose, q_chain) -> np.ndarray:
    """3 x n translational Jacobian of one fingertip (world frame)."""
    _, positions, axes, _, tip = _chain_frames(chain, palm, q_chain)
    return np.column_stack([np.cross(a, tip - o) for a, o in zip(axes, positions)])


def jacobian_q2c(hand: HandModel, palm: Pose, q) -> np.ndarray:
    """Block-diagonal (3 * n_fingers) x n_joints fingertip Jacobian."""
    q = np.asarray(q, dtype=float)
    J = np.zeros((3 * hand.n_fingers, hand.n_joints))
    for i, (chain, sl) in enumerate(zip(hand.fingers, hand.slices)):
        J[3 * i : 3 * i + 3, sl] = finger_jacobian(chain, palm, q[sl])
    return J


def link_frames(hand: HandModel, palm: Pose, q) -> dict:
    """World pose of every link frame keyed by ``(finger, joint)``.

    The palm itself is keyed ``(-1, -1)``.
    """
    q = np.asarray(q, dtype=float)
    out = {(-1, -1): palm}
    for i, (chain, sl) in enumerate(zip(hand.fingers, hand.slices)):
        rotations, positions, *_ = _chain_frames(chain, palm, q[sl])
        for j, (R, p) in enumerate(zip(rotations, positions)):
            out[(i, j)] = Pose(R, p)
    return out


# ---------------------------------------------------------------------------
# Grasp map and hand Jacobian
# ---------------------------------------------------------------------------


def contact_frame(normal) -> np.ndarray:
    """Contact frame with z along the inward normal ``-normal``.

    x is the global x-axis projected onto the tangent plane, or the global
    y-axis when x is nearly parallel to the normal.
    """
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise DegenerateContactError("contact normal is zero")
    z = -n / norm
    ref = _EX if abs(z @ _EX) < 0.9 else _EY
    x = ref - (ref @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


class DegenerateContactError(ValueError):
    pass


def grasp_map(positions, normals) -> np.ndarray:
    """6 x 3k grasp map for k frictional point contacts.

    ``positions`` and ``normals`` (outward) must be expressed in the frame
    in which the object twist is written; for the body twist used by the
    palm optimizer that is the object frame.  Block ``i`` is
    ``[R_ci; hat(c_i) R_ci]``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    k = positions.shape[0]
    G = np.zeros((6, 3 * k))
    for i in range(k):
        Rc = contact_frame(normals[i])
        G[:3, 3 * i : 3 * i + 3] = Rc
        G[3:, 3 * i : 3 * i + 3] = hat(positions[i]) @ Rc
    return G


def hand_jacobian(hand: HandModel, palm: Pose, q, normals, object_rotation=None) -> np.ndarray:
    """Fingertip Jacobian rotated into the contact frames.

    Block ``i`` is ``R_ci^T J_i``.  Without ``object_rotation`` the normals
    are in the same frame as ``palm``.  With it, the normals are in the
    object frame and each contact frame is built there and then rotated by
    ``object_rotation``; this keeps the tangent axes identical to the ones
    used by :func:`grasp_map` (the frame construction is not
    rotation-equivariant).
    """
    J = jacobian_q2c(hand, palm, q)
    normals = np.asarray(normals, dtype=float)
    R = np.eye(3) if object_rotation is None else np.asarray(object_rotation, dtype=float)
    for i in range(hand.n_fingers):
        Rc = R @ contact_frame(normals[i])
        J[3 * i : 3 * i + 3] = Rc.T @ J[3 * i : 3 * i + 3]
    return J


# ---------------------------------------------------------------------------
# Hand configuration file
# ---------------------------------------------------------------------------


def _rotation_from_config(spec) -> np.ndarray:
    if spec is None:
        return np.eye(3)
    if isinstance(spec, dict):
        if "axis_angle" in spec:
            *axis, angle = spec["axis_angle"]
            axis = np.asarray(axis, dtype=float)
            return rodrigues(axis / np.linalg.norm(axis), float(angle))
        if "matrix" in spec:
            return np.asarray(spec["matrix"], dtype=float).reshape(3, 3)
    raise ValueError(f"unsupported rotation spec: {spec!r}")


def _primitive_from_config(d, finger: int):
    from .collision import CollisionPrimitive

    joint = int(d.get("joint", -1))
    local = Pose(_rotation_from_config(d.get("rotation")), d.get("center", [0.0, 0.0, 0.0]))
    if d["kind"] == "box":
        dims = tuple(float(x) for x in d["half_extents"])
    elif d["kind"] == "capsule":
        dims = (float(d["radius"]), float(d["half_length"]))
    else:
        raise ValueError(f"unknown primitive kind {d['kind']!r}")
    return CollisionPrimitive(d["kind"], local, dims, (finger, joint), d.get("pad"))


def hand_from_dict(cfg: dict) -> HandModel:
    fingers = []
    for i, f in enumerate(cfg["fingers"]):
        joints = [
            Joint(
                axis=j["axis"],
                origin=j["origin"],
                lower=float(j["limits"][0]),
                upper=float(j["limits"][1]),
                rotation=_rotation_from_config(j.get("rotation")),
            )
            for j in f["joints"]
        ]
        links = [_primitive_from_config(d, i) for d in f.get("links", [])]
        fingers.append(
            JointChain(joints, f["fingertip_offset"], f["fingertip_normal"], links, f.get("name", f"F{i + 1}"))
        )
    palm_links = [_primitive_from_config(d, -1) for d in cfg.get("palm", {}).get("links", [])]
    hand = HandModel(fingers, palm_links, cfg.get("name", "hand"))
    declared = cfg.get("dof")
    if declared is not None and int(declared) != hand.n_joints:
        raise ValueError(f"hand declares {declared} DOF but chains sum to {hand.n_joints}")
    return hand


def load_hand(path: str | Path) -> HandModel:
    with open(path, encoding="utf-8") as fh:
        return hand_from_dict(json.load(fh))


def default_hand() -> HandModel:
    """The bundled decoupled 3-finger, 8-DOF hand."""
    text = resources.files("fingersplit.data").joinpath("barrett8.json").read_text(encoding="utf-8")
    return hand_from_dict(json.loads(text))


def default_hand_path() -> Path:
    return Path(str(resources.files("fingersplit.data").joinpath("barrett8.json")))


# ---------------------------------------------------------------------------
# Grasp state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraspState:
    """Palm pose and object pose (world), joints, and object-frame contacts."""

    palm: Pose
    q: np.ndarray
    contacts: tuple
    object_pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "contacts", tuple(self.contacts))

    @property
    def palm_in_object(self) -> Pose:
        return self.object_pose.inverse() @ self.palm

    @property
    def contact_positions(self) -> np.ndarray:
        return np.array([c.position for c in self.contacts])

    @property
    def contact_normals(self) -> np.ndarray:
        return np.array([c.normal for c in self.contacts])

    @property
    def contact_ids(self) -> tuple:
        return tuple(int(c.vertex_id) for c in self.contacts)

    def replace(self, **changes) -> "GraspState":
        fields = dict(palm=self.palm, q=self.q, contacts=self.contacts, object_pose=self.object_pose)
        fields.update(changes)
        return GraspState(**fields)
