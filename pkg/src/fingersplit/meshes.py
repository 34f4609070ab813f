"""Procedural test objects.

All generators return a :class:`SurfaceModel` centered at its vertex
centroid.  Sizes are in meters and chosen to fit the default hand.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .surface import SurfaceModel


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _star_triangles(directions) -> np.ndarray:
    """Outward-oriented triangulation of unit directions (convex hull)."""
    tri = ConvexHull(directions).simplices.copy()
    a, b, c = (directions[tri[:, k]] for k in range(3))
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def sphere(n_vertices: int = 2000, radius: float = 0.04) -> SurfaceModel:
    d = fibonacci_directions(n_vertices)
    return SurfaceModel.from_arrays(radius * d, _star_triangles(d))


def blob(n_vertices: int = 43318, radius: float = 0.04, seed: int = 7, bumps: int = 9) -> SurfaceModel:
    """Lumpy star-shaped body, a stand-in for a scanned figurine."""
    rng = np.random.default_rng(seed)
    d = fibonacci_directions(n_vertices)
    r = np.ones(len(d))
    centers = rng.normal(size=(bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = rng.uniform(-0.12, 0.18, size=bumps)
    widths = rng.uniform(0.35, 0.7, size=bumps)
    for c, a, w in zip(centers, amps, widths):
        r += a * np.exp(-(np.arccos(np.clip(d @ c, -1, 1)) / w) ** 2)
    # mild anisotropy: slightly elongated along z like a sitting animal
    scale = np.array([1.0, 0.85, 1.15])
    return SurfaceModel.from_arrays(radius * (d * r[:, None]) * scale, _star_triangles(d))


def box(extents=(0.06, 0.05, 0.08), divisions: int = 24) -> SurfaceModel:
    hx, hy, hz = (0.5 * e for e in extents)
    axes = [np.linspace(-h, h, divisions + 1) for h in (hx, hy, hz)]
    verts, tris = [], []
    offset = 0
    for ax in range(3):
        u_ax, v_ax = [a for a in range(3) if a != ax]
        U, V = np.meshgrid(axes[u_ax], axes[v_ax], indexing="ij")
        for sign in (-1.0, 1.0):
            P = np.zeros(U.shape + (3,))
            P[..., u_ax] = U
            P[..., v_ax] = V
            P[..., ax] = sign * (hx, hy, hz)[ax]
            nu, nv = U.shape
            idx = np.arange(nu * nv).reshape(nu, nv) + offset
            a, b, c, d = idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]
            t = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
            # orient outward
            pts = P.reshape(-1, 3)
            n = np.cross(pts[t[0, 1] - offset] - pts[t[0, 0] - offset], pts[t[0, 2] - offset] - pts[t[0, 0] - offset])
            if n[ax] * sign < 0:
                t = t[:, [0, 2, 1]]
            verts.append(pts)
            tris.append(t)
            offset += len(pts)
    return SurfaceModel.from_arrays(np.concatenate(verts), np.concatenate(tris))


def _grid_triangles(nu: int, nv: int, wrap_u: bool, wrap_v: bool) -> np.ndarray:
    idx = np.arange(nu * nv).reshape(nu, nv)
    iu = np.arange(nu if wrap_u else nu - 1)
    iv = np.arange(nv if wrap_v else nv - 1)
    U, V = np.meshgrid(iu, iv, indexing="ij")
    a = idx[U, V]
    b = idx[(U + 1) % nu, V]
    c = idx[(U + 1) % nu, (V + 1) % nv]
    d = idx[U, (V + 1) % nv]
    return np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])


def torus(major: float = 0.035, minor: float = 0.014, nu: int = 160, nv: int = 64) -> SurfaceModel:
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    v = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    U, V = np.meshgrid(u, v, indexing="ij")
    x = (major + minor * np.cos(V)) * np.cos(U)
    y = (major + minor * np.cos(V)) * np.sin(U)
    z = minor * np.sin(V)
    verts = np.stack([x, y, z], -1).reshape(-1, 3)
    return SurfaceModel.from_arrays(verts, _grid_triangles(nu, nv, True, True))


def revolution(profile_s, profile_r, n_theta: int = 64) -> SurfaceModel:
    """Closed surface of revolution about the x-axis.

    ``profile_r`` must be positive; the two ends are closed by pole vertices.
    """
    s = np.asarray(profile_s, dtype=float)
    r = np.asarray(profile_r, dtype=float)
    th = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    S, T = np.meshgrid(s, th, indexing="ij")
    R = np.repeat(r[:, None], n_theta, axis=1)
    ring = np.stack([S, R * np.cos(T), R * np.sin(T)], -1).reshape(-1, 3)
    tri = _grid_triangles(len(s), n_theta, False, True)
    n_ring = len(ring)
    poles = np.array([[s[0] - 0.5 * r[0], 0, 0], [s[-1] + 0.5 * r[-1], 0, 0]])
    verts = np.concatenate([ring, poles])
    first = np.arange(n_theta)
    last = np.arange(n_theta) + (len(s) - 1) * n_theta
    cap0 = np.column_stack([np.full(n_theta, n_ring), np.roll(first, -1), first])
    cap1 = np.column_stack([np.full(n_theta, n_ring + 1), last, np.roll(last, -1)])
    tri = np.concatenate([tri, cap0, cap1])
    # orient outward (radial component of face normals positive on the side wall)
    a, b, c = (verts[tri[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    mid = (a + b + c) / 3.0
    radial = mid.copy()
    radial[:, 0] = 0.0
    side = np.linalg.norm(radial, axis=1) > 1e-9
    score = np.einsum("ij,ij->i", n[side], radial[side]).sum()
    if score < 0:
        tri = tri[:, [0, 2, 1]]
    return SurfaceModel.from_arrays(verts, tri)


def tool(length: float = 0.2, n_theta: int = 72, n_s: int = 240) -> SurfaceModel:
    """Screwdriver-like body: fat handle, thin shaft, rounded ends."""
    s = np.linspace(0.0, length, n_s)
    handle_end = 0.45 * length
    r = np.where(
        s < handle_end,
        0.016 + 0.002 * np.sin(np.pi * s / handle_end),
        0.016 - 0.011 * np.clip((s - handle_end) / (0.08 * length), 0.0, 1.0),
    )
    # round the butt
    r = r * np.sqrt(np.clip(s / (0.03 * length), 0.15, 1.0))
    return revolution(s - 0.5 * length, r, n_theta)


FIXTURES = {
    "sphere": lambda: sphere(12000),
    "box": lambda: box(divisions=36),
    "torus": lambda: torus(),
    "blob": lambda: blob(),
    "tool": lambda: tool(),
}


def fixture(name: str) -> SurfaceModel:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    return FIXTURES[name]()


def fixture_set() -> dict:
    """The five fixture objects used by the acceptance suite."""
    return {name: make() for name, make in FIXTURES.items()}
