"""Object surface: mesh loading, vertex normals, nearest-vertex queries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class DegenerateMeshError(ValueError):
    """Raised for meshes without usable triangles."""


@dataclass(frozen=True)
class SurfacePoint:
    position: np.ndarray
    normal: np.ndarray
    vertex_id: int = -1


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    """Immutable triangle mesh with outward unit vertex normals and a KD-tree."""

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray
    spatial_index: cKDTree = field(repr=False)
    bbox: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, triangles, normals=None, center: bool = True, scale: float = 1.0) -> "SurfaceModel":
        """Build a model from raw arrays.

        Duplicate vertices are merged, unreferenced vertices dropped,
        triangles with repeated corners removed.  Missing normals are
        estimated as area-weighted averages of incident face normals.
        """
        v = np.asarray(vertices, dtype=float).reshape(-1, 3) * float(scale)
        tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        nrm = None if normals is None else np.asarray(normals, dtype=float).reshape(-1, 3)
        if tri.size and (tri.min() < 0 or tri.max() >= len(v)):
            raise MeshFormatError("triangle references a vertex index out of range")

        # merge exact duplicates, keeping first-occurrence order
        _, first, inverse = np.unique(v, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        remap = rank[inverse]
        v = v[first[order]]
        if nrm is not None:
            acc = np.zeros_like(v)
            np.add.at(acc, remap, nrm)
            nrm = acc
        tri = remap[tri]

        tri = tri[(tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) & (tri[:, 0] != tri[:, 2])]
        if len(tri) == 0:
            raise DegenerateMeshError("mesh has no non-degenerate triangles")

        used = np.zeros(len(v), dtype=bool)
        used[tri.ravel()] = True
        if not used.all():
            keep = np.flatnonzero(used)
            new_index = -np.ones(len(v), dtype=np.int64)
            new_index[keep] = np.arange(len(keep))
            v = v[keep]
            tri = new_index[tri]
            if nrm is not None:
                nrm = nrm[keep]

        if center:
            v = v - v.mean(axis=0)

        if nrm is None or not np.all(np.linalg.norm(nrm, axis=1) > 1e-12):
            est = area_weighted_normals(v, tri)
            nrm = est if nrm is None else np.where(np.linalg.norm(nrm, axis=1, keepdims=True) > 1e-12, nrm, est)
        nrm = _unit_rows(nrm, v)

        for arr in (v, tri, nrm):
            arr.flags.writeable = False
        bbox = np.array([v.min(axis=0), v.max(axis=0)])
        bbox.flags.writeable = False
        return cls(v, tri, nrm, cKDTree(v), bbox)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    def nearest_ids(self, points) -> np.ndarray:
        """Nearest-vertex ids for an (n, 3) array; ties go to the lowest id."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(4, self.n_vertices)
        _, idx = self.spatial_index.query(pts, k=k)
        idx = np.asarray(idx).reshape(len(pts), k)
        diff = self.vertices[idx] - pts[:, None, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = d2.min(axis=1, keepdims=True)
        cand = np.where(d2 == best, idx, np.iinfo(np.int64).max)
        return cand.min(axis=1)

    def point(self, vertex_id: int) -> SurfacePoint:
        return SurfacePoint(self.vertices[vertex_id].copy(), self.vertex_normals[vertex_id].copy(), int(vertex_id))


def _unit_rows(nrm, v):
    n = np.linalg.norm(nrm, axis=1, keepdims=True)
    bad = n[:, 0] < 1e-12
    if bad.any():
        log.warning("%d vertices without a usable normal; using radial direction", int(bad.sum()))
        radial = v[bad] - v.mean(axis=0)
        radial[np.linalg.norm(radial, axis=1) < 1e-12] = [0.0, 0.0, 1.0]
        nrm = nrm.copy()
        nrm[bad] = radial
        n = np.linalg.norm(nrm, axis=1, keepdims=True)
    return nrm / n


def area_weighted_normals(vertices, triangles) -> np.ndarray:
    """Sum of incident face normals weighted by face area (not normalized)."""
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    face = np.cross(b - a, c - a)  # length = 2 * area
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    return acc


def nearest_neighbor(model: SurfaceModel, p) -> SurfacePoint:
    """Closest mesh vertex to ``p`` (with its outward normal)."""
    return model.point(int(model.nearest_ids(np.asarray(p, dtype=float)[None, :])[0]))


def downsample(model: SurfaceModel, cell: float) -> np.ndarray:
    """Voxel-grid centroids of the mesh vertices, one per occupied voxel."""
    if not cell > 0:
        raise ValueError(f"cell size must be positive, got {cell}")
    keys = np.floor((model.vertices - model.bbox[0]) / cell).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    out = np.zeros((len(counts), 3))
    for k in range(3):
        out[:, k] = np.bincount(inverse, weights=model.vertices[:, k]) / counts
    return out


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------


def load_mesh(path, format: Optional[str] = None, scale: float = 1.0) -> SurfaceModel:
    """Read an OBJ, STL (ASCII or binary) or ASCII PLY file.

    The mesh is centered on its vertex centroid; ``scale`` is applied first.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    data = path.read_bytes()
    if fmt == "OBJ":
        v, tri, nrm = _parse_obj(data.decode("utf-8", errors="replace"))
    elif fmt == "STL":
        v, tri, nrm = _parse_stl(data)
    elif fmt == "PLY":
        v, tri, nrm = _parse_ply(data)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    return SurfaceModel.from_arrays(v, tri, nrm, center=True, scale=scale)


def _floats(parts, lineno, n=3):
    try:
        return [float(x) for x in parts[:n]]
    except ValueError as exc:
        raise MeshFormatError(f"line {lineno}: bad number ({exc})") from None


def _parse_obj(text):
    verts, vnorms, tris, corner_norms = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append(_floats(parts[1:], lineno))
        elif tag == "vn":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: normal needs 3 components")
            vnorms.append(_floats(parts[1:], lineno))
        elif tag == "f":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: face needs at least 3 vertices")
            vi, ni = [], []
            for tok in parts[1:]:
                fields = tok.split("/")
                try:
                    a = int(fields[0])
                    b = int(fields[2]) if len(fields) > 2 and fields[2] else None
                except ValueError:
                    raise MeshFormatError(f"line {lineno}: bad face index {tok!r}") from None
                vi.append(a - 1 if a > 0 else len(verts) + a)
                if b is not None:
                    ni.append(b - 1 if b > 0 else len(vnorms) + b)
            for k in range(1, len(vi) - 1):
                tris.append((vi[0], vi[k], vi[k + 1]))
            if len(ni) == len(vi):
                corner_norms.extend(zip(vi, ni))
    if not verts:
        raise MeshFormatError("no vertices found")
    v = np.array(verts, dtype=float)
    nrm = None
    if corner_norms and vnorms:
        vn = np.array(vnorms, dtype=float)
        nrm = np.zeros_like(v)
        idx = np.array(corner_norms, dtype=np.int64)
        if idx[:, 1].max() >= len(vn) or idx[:, 1].min() < 0:
            raise MeshFormatError("face references a normal index out of range")
        unit = vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
        # each distinct (vertex, normal) pair counted once
        idx = np.unique(idx, axis=0)
        np.add.at(nrm, idx[:, 0], unit[idx[:, 1]])
    return v, np.array(tris, dtype=np.int64).reshape(-1, 3), nrm


_STL_DTYPE = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def _parse_stl(data: bytes):
    if len(data) >= 84:
        n = int(np.frombuffer(data, dtype="<u4", count=1, offset=80)[0])
        if len(data) == 84 + 50 * n:
            rec = np.frombuffer(data, dtype=_STL_DTYPE, count=n, offset=84)
            v = rec["v"].reshape(-1, 3).astype(float)
            return v, np.arange(len(v)).reshape(-1, 3), None
    text = data.decode("ascii", errors="replace")
    if not text.lstrip().lower().startswith("solid"):
        raise MeshFormatError("offset 0: neither binary STL (size mismatch) nor ASCII 'solid'")
    verts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if parts and parts[0] == "vertex":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append(_floats(parts[1:], lineno))
    if len(verts) % 3:
        raise MeshFormatError("ASCII STL vertex count is not a multiple of 3")
    v = np.array(verts, dtype=float).reshape(-1, 3)
    return v, np.arange(len(v)).reshape(-1, 3), None


def _parse_ply(data: bytes):
    text = data.decode("ascii", errors="replace")
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("line 1: missing 'ply' magic")
    elements = []
    body_start = None
    for lineno, raw in enumerate(lines[1:], 2):
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshFormatError(f"line {lineno}: only ASCII PLY is supported")
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"line {lineno}: property before element")
            elements[-1][2].append(parts[-1] if parts[1] != "list" else ("list", parts[-1]))
        elif parts[0] == "end_header":
            body_start = lineno
            break
    if body_start is None:
        raise MeshFormatError("missing end_header")
    cursor = body_start
    verts, nrm, tris = None, None, []
    for name, count, props in elements:
        rows = lines[cursor : cursor + count]
        if len(rows) < count:
            raise MeshFormatError(f"line {cursor + len(rows) + 1}: unexpected end of file in element {name!r}")
        if name == "vertex":
            try:
                table = np.array([[float(x) for x in r.split()[: len(props)]] for r in rows], dtype=float)
            except ValueError as exc:
                raise MeshFormatError(f"element vertex near line {cursor + 1}: {exc}") from None
            col = {p: i for i, p in enumerate(props) if isinstance(p, str)}
            verts = table[:, [col["x"], col["y"], col["z"]]]
            if all(k in col for k in ("nx", "ny", "nz")):
                nrm = table[:, [col["nx"], col["ny"], col["nz"]]]
        elif name == "face":
            for off, r in enumerate(rows):
                parts = r.split()
                try:
                    n = int(parts[0])
                    idx = [int(x) for x in parts[1 : 1 + n]]
                except (ValueError, IndexError):
                    raise MeshFormatError(f"line {cursor + off + 1}: bad face record") from None
                for k in range(1, n - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
        cursor += count
    if verts is None:
        raise MeshFormatError("no vertex element")
    return verts, np.array(tris, dtype=np.int64).reshape(-1, 3), nrm
