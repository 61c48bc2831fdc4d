"""Triangulated tape surfaces, DOF numbering and the edge basis.

Currents live on interior edges (one divergence-conforming basis function
per edge shared by two triangles), potentials on faces (piecewise constant).
Boundary edges carry no unknown: no current leaves the open tape.
"""
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class HelixSpec:
    radius: float
    pitch: float
    phase: float = 0.0


@dataclass(frozen=True)
class TapeSpec:
    """Rectangular tape of ``width`` x ``length`` metres.

    ``nx`` divisions run across the width, ``nz`` along the length. With a
    ``helix`` the flat strip is wound onto a cylinder about the z axis.
    """

    length: float
    width: float
    nx: int
    nz: int
    helix: Optional[HelixSpec] = None

    def validate(self):
        for name in ("length", "width"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DimensionError(f"must be a positive length, got {v!r}", field=name)
        for name in ("nx", "nz"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise DimensionError(f"must be an integer >= 1, got {v!r}", field=name)
        if self.helix is not None:
            h = self.helix
            if not h.radius > self.width / (2 * math.pi):
                raise DimensionError(
                    f"radius {h.radius} must exceed width/(2 pi) = {self.width / (2 * math.pi)}",
                    field="helix.radius")
            if not (math.isfinite(h.pitch) and h.pitch >= 0):
                raise DimensionError(f"must be finite and >= 0, got {h.pitch!r}", field="helix.pitch")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        helix = d.pop("helix", None)
        return cls(**d, helix=None if helix is None else HelixSpec(**helix))


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray          # (n_v, 3) [m]
    triangles: np.ndarray         # (n_f, 3) vertex indices
    spec: Optional[TapeSpec] = None
    edges: np.ndarray = field(init=False)            # (n_edges, 2), sorted pairs
    edge_triangles: np.ndarray = field(init=False)   # (n_edges, 2), -1 when absent
    interior_edge_ids: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)        # (n_f, 3) edge opposite local vertex k
    tri_dofs: np.ndarray = field(init=False)         # (n_f, 3) DOF index or -1
    tri_signs: np.ndarray = field(init=False)        # (n_f, 3) +1 / -1 / 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DimensionError("vertices must have shape (n, 3)", field="vertices")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise DimensionError("triangles must have shape (n, 3)", field="triangles")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise DimensionError("vertex index out of range", field="triangles")
        if np.any(self.areas <= 0):
            bad = int(np.argmin(self.areas))
            raise DimensionError(f"triangle {bad} has non-positive area", field="triangles")
        self._build_topology()
        for a in ("vertices", "triangles", "edges", "edge_triangles", "interior_edge_ids",
                  "tri_edges", "tri_dofs", "tri_signs"):
            getattr(self, a).setflags(write=False)

    def _build_topology(self):
        tri = self.triangles
        n_f = len(tri)
        # local edge k is opposite local vertex k
        pairs = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        counts = np.bincount(inverse, minlength=len(edges))
        if np.any(counts > 2):
            raise DimensionError("non-manifold edge with 3+ triangles", field="triangles")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        owner = np.repeat(np.arange(n_f), 3)
        # visiting triangles in ascending order puts the lower index in slot 0
        for flat, e in enumerate(inverse):
            slot = 0 if edge_tris[e, 0] < 0 else 1
            edge_tris[e, slot] = owner[flat]
        self.edges = edges
        self.edge_triangles = edge_tris
        interior = np.flatnonzero(counts == 2)
        self.interior_edge_ids = interior
        dof_of_edge = -np.ones(len(edges), dtype=np.int64)
        dof_of_edge[interior] = np.arange(len(interior))
        self.tri_edges = inverse.reshape(n_f, 3)
        self.tri_dofs = dof_of_edge[self.tri_edges]
        signs = np.where(edge_tris[self.tri_edges, 0] == np.arange(n_f)[:, None], 1, -1)
        self.tri_signs = np.where(self.tri_dofs >= 0, signs, 0)

    @property
    def n_e(self):
        return len(self.interior_edge_ids)

    @property
    def n_f(self):
        return len(self.triangles)

    @property
    def corners(self):
        """(n_f, 3, 3) triangle vertex coordinates."""
        return self.vertices[self.triangles]

    @property
    def areas(self):
        c = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def centroids(self):
        return self.corners.mean(axis=1)

    def edge_lengths(self, edge_ids=None):
        e = self.edges if edge_ids is None else self.edges[edge_ids]
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def face_components(self):
        """Label of the connected component of every face (adjacency through interior edges)."""
        et = self.edge_triangles[self.interior_edge_ids]
        n = self.n_f
        adj = sp.coo_matrix((np.ones(len(et)), (et[:, 0], et[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        return labels

    def gauge_faces(self):
        """Lowest face index of each connected component; its potential is pinned to 0."""
        labels = self.face_components()
        return np.array([np.flatnonzero(labels == c)[0] for c in np.unique(labels)])

    def hash(self):
        import hashlib
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]


def _helix_map(u, v, helix):
    alpha = math.atan2(helix.pitch, 2 * math.pi * helix.radius)
    s = v * math.cos(alpha) - u * math.sin(alpha)
    z = v * math.sin(alpha) + u * math.cos(alpha)
    theta = s / helix.radius + helix.phase
    return np.stack([helix.radius * np.cos(theta), helix.radius * np.sin(theta), z], axis=-1)


def generate_tape_mesh(spec: TapeSpec) -> Mesh:
    """Structured nx x nz quad grid, each quad split along its (i,j)-(i+1,j+1) diagonal.

    The flat tape lies in the y = 0 plane (normal to the applied field),
    centred on the origin; x spans the width, z the length.
    """
    spec.validate()
    nx, nz = spec.nx, spec.nz
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(nz + 1))
    u = (-0.5 + i.ravel() / nx) * spec.width
    v = (j.ravel() / nz) * spec.length
    if spec.helix is None:
        verts = np.stack([u, np.zeros_like(u), v - 0.5 * spec.length], axis=1)
    else:
        verts = _helix_map(u, v, spec.helix)

    def vid(a, b):
        return b * (nx + 1) + a

    tris = []
    for b in range(nz):
        for a in range(nx):
            v00, v10, v01, v11 = vid(a, b), vid(a + 1, b), vid(a, b + 1), vid(a + 1, b + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh(verts, np.array(tris, dtype=np.int64), spec=spec)


def incidence_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Face-to-edge incidence G (n_f x n_e): +1 on the "+" face, -1 on the "-" face."""
    et = mesh.edge_triangles[mesh.interior_edge_ids]
    n_e = mesh.n_e
    rows = np.concatenate([et[:, 0], et[:, 1]])
    cols = np.concatenate([np.arange(n_e), np.arange(n_e)])
    vals = np.concatenate([np.ones(n_e), -np.ones(n_e)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_f, n_e))


def _barycentric(corners, p):
    a, b, c = corners
    n = np.cross(b - a, c - a)
    area2 = np.dot(n, n)
    l1 = np.dot(np.cross(c - b, p - b), n) / area2
    l2 = np.dot(np.cross(a - c, p - c), n) / area2
    l3 = np.dot(np.cross(b - a, p - a), n) / area2
    off_plane = abs(np.dot(p - a, n)) / math.sqrt(area2)
    return np.array([l1, l2, l3]), off_plane


def edge_basis_eval(mesh: Mesh, edge_id: int, point, side: Optional[str] = None) -> np.ndarray:
    """Value [1/m] of the basis function of interior edge ``edge_id`` at ``point``.

    The function is (r - p)/(2A) on the "+" triangle and -(r - p)/(2A) on the
    "-" triangle, p being the vertex opposite the edge; it carries one ampere
    across the edge. ``side`` ('+' or '-') disambiguates points on the shared edge.
    """
    edge_id = int(edge_id)
    if not 0 <= edge_id < len(mesh.edges) or mesh.edge_triangles[edge_id, 1] < 0:
        raise DomainError(f"edge {edge_id} is not an interior edge")
    point = np.asarray(point, dtype=float)
    scale = math.sqrt(mesh.areas[mesh.edge_triangles[edge_id]].max())
    tol = 1e-10
    candidates = []
    for slot, sign in ((0, 1.0), (1, -1.0)):
        t = mesh.edge_triangles[edge_id, slot]
        lam, h = _barycentric(mesh.corners[t], point)
        if lam.min() >= -tol and h <= tol * scale:
            candidates.append((slot, sign, t))
    if side is not None:
        candidates = [c for c in candidates if c[0] == (0 if side == "+" else 1)]
    if not candidates:
        raise DomainError(f"point {point.tolist()} is not on a triangle adjacent to edge {edge_id}")
    slot, sign, t = candidates[0]
    k = int(np.flatnonzero(mesh.tri_edges[t] == edge_id)[0])
    p = mesh.vertices[mesh.triangles[t, k]]
    return sign * (point - p) / (2.0 * mesh.areas[t])


def write_mesh(mesh: Mesh, path):
    doc = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
    }
    if mesh.spec is not None:
        doc["spec"] = mesh.spec.to_dict()
    Path(path).write_text(json.dumps(doc, indent=1))


def read_mesh(path) -> Mesh:
    doc = json.loads(Path(path).read_text())
    spec = doc.get("spec")
    return Mesh(np.array(doc["vertices"], dtype=float).reshape(-1, 3),
                np.array(doc["triangles"], dtype=np.int64).reshape(-1, 3),
                spec=None if spec is None else TapeSpec.from_dict(spec))
