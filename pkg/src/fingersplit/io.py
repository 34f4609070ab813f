"""Plan artifacts: grasp JSON, quality-trace CSV and OBJ scene export."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .collision import primitive_world_poses
from .kinematics import GraspState, HandModel, Pose
from .quality import MetricReport, QualityWeights, metric_report
from .surface import SurfaceModel

TRACE_COLUMNS = (
    "outer", "phase", "iteration", "q_total", "q_object", "q_hand", "residual",
    "c1x", "c1y", "c1z", "c2x", "c2y", "c2z", "c3x", "c3y", "c3z",
)
TIMING_KEYS = ("cpo_ms", "ppo_ms", "tangent_ms", "projection_ms", "collision_ms")


def fmt(x: float) -> str:
    """17 significant digits, locale independent."""
    return format(float(x), ".17g")


def _pose_dict(p: Pose) -> dict:
    return {"rotation": [float(v) for v in p.rotation.ravel()], "translation": [float(v) for v in p.translation]}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(np.asarray(d["rotation"], dtype=float).reshape(3, 3), np.asarray(d["translation"], dtype=float))


def grasp_record(result, config_echo: dict | None = None) -> dict:
    """JSON-ready dictionary for a :class:`~fingersplit.splitter.PlanResult`.

    Rotations are stored row-major.  Poses and contacts are in the world
    frame; the object stays at its initial pose during planning.
    """
    st = result.final
    timing = {k: float(result.timing.get(k, 0.0)) for k in TIMING_KEYS}
    timing.update({k: float(v) for k, v in result.timing.items() if k not in timing})
    return {
        "palm": _pose_dict(st.palm),
        "object_pose": _pose_dict(st.object_pose),
        "q": [float(v) for v in st.q],
        "contacts": st.contact_positions.tolist(),
        "normals": st.contact_normals.tolist(),
        "contact_ids": list(st.contact_ids),
        "metrics_before": result.metrics_before.as_dict(),
        "metrics_after": result.metrics_after.as_dict(),
        "timing": timing,
        "termination": {
            "reason": result.reason,
            "outer_iterations": result.outer_iterations,
            "cpo_iterations": list(result.cpo_iterations),
            "ppo_iterations": list(result.ppo_iterations),
            "phase_reasons": [list(r) for r in result.phase_reasons],
            "error": result.error,
        },
        "config_echo": config_echo or {},
    }


def write_grasp_json(path, result, config_echo: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(grasp_record(result, config_echo), fh, indent=2)
        fh.write("\n")


def read_grasp_json(path) -> dict:
    """Load a grasp file, converting poses and arrays back to numpy types."""
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    rec["palm"] = _pose_from_dict(rec["palm"])
    rec["object_pose"] = _pose_from_dict(rec.get("object_pose", _pose_dict(Pose())))
    for key in ("q", "contacts", "normals"):
        rec[key] = np.asarray(rec[key], dtype=float)
    return rec


def reevaluate(rec: dict, limits, weights: QualityWeights, mu: float = 0.5, m_edges: int = 8) -> MetricReport:
    """Recompute the final metrics of a loaded grasp record."""
    inv = rec["object_pose"].inverse()
    contacts = inv.apply(rec["contacts"])
    normals = inv.apply_vector(rec["normals"])
    return metric_report(contacts, normals, rec["q"], limits, weights, mu, m_edges)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow(
                [r.outer, r.phase, r.iteration, fmt(r.q_total), fmt(r.q_object), fmt(r.q_hand), fmt(r.residual)]
                + [fmt(v) for v in np.asarray(r.contacts).ravel()]
            )


def read_trace_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Scene export
# ---------------------------------------------------------------------------


def icosahedron(center, radius: float) -> tuple:
    t = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    v *= radius / np.linalg.norm(v[0])
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2],
         [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5],
         [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    return v + np.asarray(center, dtype=float), f


def box_mesh(half) -> tuple:
    hx, hy, hz = half
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    f = np.array(
        [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    )
    return v, f


def capsule_mesh(radius: float, half_length: float, n_theta: int = 16, n_cap: int = 4) -> tuple:
    """Capsule along local z: rings of two hemispheres plus two poles."""
    rings = []
    for sign, phis in ((-1, np.linspace(-np.pi / 2, 0, n_cap + 1)[1:]), (1, np.linspace(0, np.pi / 2, n_cap + 1)[:-1])):
        for phi in phis:
            rings.append((radius * np.cos(phi), sign * half_length + radius * np.sin(phi)))
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    v = [[0.0, 0.0, -half_length - radius]]
    for r, z in rings:
        v.extend([[r * np.cos(a), r * np.sin(a), z] for a in th])
    v.append([0.0, 0.0, half_length + radius])
    f = []
    for j in range(n_theta):
        f.append([0, 1 + (j + 1) % n_theta, 1 + j])
    for i in range(len(rings) - 1):
        a, b = 1 + i * n_theta, 1 + (i + 1) * n_theta
        for j in range(n_theta):
            j1 = (j + 1) % n_theta
            f.append([a + j, a + j1, b + j1])
            f.append([a + j, b + j1, b + j])
    top = len(v) - 1
    last = 1 + (len(rings) - 1) * n_theta
    for j in range(n_theta):
        f.append([last + j, last + (j + 1) % n_theta, top])
    return np.array(v), np.array(f)


def export_scene(state: GraspState, hand: HandModel, surface: SurfaceModel, path, marker_radius: float = 0.002) -> None:
    """Write object, hand link primitives and contact markers as one OBJ.

    Groups are named ``object``, ``links`` and ``contacts``; everything is
    placed in the world frame.
    """
    groups = []
    groups.append(("object", state.object_pose.apply(surface.vertices), surface.triangles))
    lv, lf, off = [], [], 0
    for prim, pose in primitive_world_poses(hand, state.palm, state.q):
        if prim.kind == "box":
            v, f = box_mesh(prim.dims)
        else:
            v, f = capsule_mesh(*prim.dims)
        lv.append(pose.apply(v))
        lf.append(f + off)
        off += len(v)
    groups.append(("links", np.vstack(lv) if lv else np.zeros((0, 3)), np.vstack(lf) if lf else np.zeros((0, 3), int)))
    mv, mf, off = [], [], 0
    for c in state.object_pose.apply(state.contact_positions):
        v, f = icosahedron(c, marker_radius)
        mv.append(v)
        mf.append(f + off)
        off += len(v)
    groups.append(("contacts", np.vstack(mv), np.vstack(mf)))

    base = 1
    with open(path, "w", encoding="utf-8") as fh:
        for name, v, f in groups:
            fh.write(f"g {name}\n")
            for p in v:
                fh.write(f"v {fmt(p[0])} {fmt(p[1])} {fmt(p[2])}\n")
            for tri in f:
                fh.write(f"f {tri[0] + base} {tri[1] + base} {tri[2] + base}\n")
            base += len(v)


def read_obj_groups(path) -> dict:
    """Vertices and faces of each ``g`` group of an OBJ written by :func:`export_scene`."""
    groups, current, base = {}, None, 1
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "g":
                if current is not None:
                    base += len(groups[current][0])
                current = parts[1]
                groups[current] = ([], [])
            elif parts[0] == "v":
                groups[current][0].append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                groups[current][1].append([int(x) - base for x in parts[1:4]])
    return {k: (np.array(v, dtype=float), np.array(f, dtype=int)) for k, (v, f) in groups.items()}


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
