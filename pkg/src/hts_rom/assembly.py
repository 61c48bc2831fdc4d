"""Full-order operators: inductance, resistance, its Jacobian and the source.

Every operator is assembled triangle by triangle from the three local basis
slots of each triangle (slot k belongs to the edge opposite vertex k; slots on
boundary edges carry no unknown and are zeroed).
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import quadrature as quad
from .errors import ConfigError
from .geometry import Mesh, incidence_matrix
from .material import MaterialParams, sheet_resistivity, sheet_resistivity_derivative

MU0 = 4e-7 * math.pi


@dataclass(frozen=True)
class ExcitationSpec:
    """Uniform field B0 sin(2 pi f t) along ``direction``."""

    B0: float = 0.02
    freq: float = 50.0
    direction: tuple = (0.0, 1.0, 0.0)

    def validate(self):
        if not self.B0 >= 0:
            raise ConfigError([("B0", f"must be >= 0, got {self.B0}")])
        if not self.freq > 0:
            raise ConfigError([("freq", f"must be > 0, got {self.freq}")])
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ConfigError([("direction", "must be a unit vector")])

    def field_rate(self, t):
        """dB/dt [T/s] at time t."""
        w = 2 * math.pi * self.freq
        return w * self.B0 * math.cos(w * t)


@dataclass(frozen=True)
class QuadratureConfig:
    far_level: int = 0          # subdivision level of the 7-point rule for far pairs
    near_level: int = 1         # outer rule for pairs sharing a vertex or an edge
    self_level: int = 2         # outer rule for coincident pairs
    duffy_order: int = 12       # Gauss-Legendre points per direction on each Duffy sub-triangle

    def validate(self):
        errs = []
        for name in ("far_level", "near_level", "self_level"):
            v = getattr(self, name)
            if v not in (0, 1, 2, 3):
                errs.append((f"quadrature.{name}", f"supported levels are 0..3, got {v}"))
        if not 4 <= self.duffy_order <= 20:
            errs.append(("quadrature.duffy_order", f"must be in [4, 20], got {self.duffy_order}"))
        if errs:
            raise ConfigError(errs)


@dataclass(frozen=True)
class ElementTables:
    """Per-triangle data mapping edge DOFs to local current density."""

    dofs: np.ndarray      # (n_f, 3) DOF index, n_e for boundary slots
    C: np.ndarray         # (n_f, 3, 3) centroid basis value: [xyz, slot]
    M: np.ndarray         # (n_f, 3, 3) local Gram matrix of the basis
    areas: np.ndarray     # (n_f,)
    n_e: int

    def local(self, i):
        """Local slot currents (n_f, 3); boundary slots read a padded zero."""
        return np.append(i, 0.0)[self.dofs]

    def sheet_current(self, i):
        """Centroid sheet current density K (n_f, 3) [A/m] for edge currents i (n_e,) or (n_e, m)."""
        i = np.asarray(i, dtype=float)
        if i.ndim == 1:
            return np.einsum("fdk,fk->fd", self.C, self.local(i))
        pad = np.vstack([i, np.zeros((1, i.shape[1]))])
        return np.einsum("fdk,fkm->fmd", self.C, pad[self.dofs])


def element_tables(mesh: Mesh) -> ElementTables:
    corners = mesh.corners
    areas = mesh.areas
    signs = mesh.tri_signs.astype(float)
    active = mesh.tri_dofs >= 0
    dofs = np.where(active, mesh.tri_dofs, mesh.n_e)
    centroid = corners.mean(axis=1)
    # basis slot k: s_k (r - p_k) / (2A)
    C = (centroid[:, None, :] - corners) * (signs / (2 * areas[:, None]))[:, :, None]
    C = np.transpose(C, (0, 2, 1))
    bary, w = quad.MIDPOINT3
    pts = quad.map_points(corners, bary)                      # (n_f, 3q, 3)
    d = pts[:, :, None, :] - corners[:, None, :, :]           # (n_f, q, slot, xyz)
    M = np.einsum("q,fqkd,fqld->fkl", w, d, d)
    M *= (signs[:, :, None] * signs[:, None, :]) / (4 * areas[:, None, None])
    return ElementTables(dofs=dofs, C=C, M=M, areas=areas, n_e=mesh.n_e)


# ---------------------------------------------------------------- inductance


def _pair_classes(mesh):
    tri = mesh.triangles
    n = len(tri)
    inc = sp.csr_matrix((np.ones(tri.size), (np.repeat(np.arange(n), 3), tri.ravel())),
                        shape=(n, len(mesh.vertices)))
    shared = (inc @ inc.T).toarray().astype(int)
    a, b = np.triu_indices(n)
    s = shared[a, b]
    coincident = s == 3
    touching = (s > 0) & (s < 3)
    far = s == 0
    return (a[far], b[far]), (a[touching], b[touching]), (a[coincident], b[coincident])


def _far_block(corners, ta, tb, level, chunk=4096):
    """Local 3x3 blocks sum_qp w_q w_p (r_q - p_k).(r'_p - p_l) / |r_q - r'_p| for distant pairs."""
    bary, w = quad.subdivided_rule(level)
    out = np.empty((len(ta), 3, 3))
    for s in range(0, len(ta), chunk):
        ca, cb = corners[ta[s:s + chunk]], corners[tb[s:s + chunk]]
        ra, rb = quad.map_points(ca, bary), quad.map_points(cb, bary)
        R = np.linalg.norm(ra[:, :, None, :] - rb[:, None, :, :], axis=-1)
        K = (w[:, None] * w[None, :]) / R
        da = ra[:, :, None, :] - ca[:, None, :, :]              # (P, q, k, d)
        db = rb[:, :, None, :] - cb[:, None, :, :]
        out[s:s + chunk] = np.einsum("pqkd,pqr,prld->pkl", da, K, db, optimize=True)
    return out


def duffy_potentials(obs, src, order):
    """Integrals over triangles ``src`` (P, 3, 3) seen from points ``obs`` (P, m, 3).

    Returns I0 = int 1/R dS' (P, m) and I1 = int r'/R dS' (P, m, 3), using a
    fan of three sub-triangles with apex at the projection of each observation
    point onto the source plane and a Duffy map that cancels the 1/R singularity.
    """
    x, wx = quad.gauss_legendre01(order)
    n = np.cross(src[:, 1] - src[:, 0], src[:, 2] - src[:, 0])
    n_hat = n / np.linalg.norm(n, axis=1, keepdims=True)
    h = np.einsum("pmd,pd->pm", obs - src[:, None, 0, :], n_hat)
    apex = obs - h[..., None] * n_hat[:, None, :]
    I0 = np.zeros(obs.shape[:2])
    I1 = np.zeros(obs.shape)
    U, V = np.meshgrid(x, x, indexing="ij")
    W = np.outer(wx, wx)
    for k in range(3):
        va = src[:, k][:, None, :]
        vb = src[:, (k + 1) % 3][:, None, :]
        e0 = va - apex                                   # (P, m, 3)
        e1 = vb - va
        area2 = np.einsum("pmd,pd->pm", np.cross(e0, e1), n_hat)   # signed 2*area
        d = e0[:, :, None, :] + V.ravel()[None, None, :, None] * e1[:, :, None, :]
        u = U.ravel()
        rp = apex[:, :, None, :] + u[None, None, :, None] * d    # (P, m, g, 3)
        R = np.sqrt(h[:, :, None] ** 2 + (u ** 2)[None, None, :] * np.einsum("pmgd,pmgd->pmg", d, d))
        # dS' = area2 * u du dv
        g = (W.ravel() * u)[None, None, :] / R * area2[:, :, None]
        I0 += g.sum(axis=2)
        I1 += np.einsum("pmg,pmgd->pmd", g, rp)
    return I0, I1


def _near_block(corners, ta, tb, level, order, chunk=128):
    """Local blocks for touching or coincident pairs: outer subdivided rule on ta,
    singular-cancelling inner integration on tb."""
    bary, w = quad.subdivided_rule(level)
    out = np.empty((len(ta), 3, 3))
    for s in range(0, len(ta), chunk):
        ca, cb = corners[ta[s:s + chunk]], corners[tb[s:s + chunk]]
        ra = quad.map_points(ca, bary)                           # (P, q, 3)
        I0, I1 = duffy_potentials(ra, cb, order)
        da = ra[:, :, None, :] - ca[:, None, :, :]               # (P, q, k, d)
        inner = I1[:, :, None, :] - I0[:, :, None, None] * cb[:, None, :, :]   # (P, q, l, d)
        areas_b = 0.5 * np.linalg.norm(np.cross(cb[:, 1] - cb[:, 0], cb[:, 2] - cb[:, 0]), axis=1)
        # the inner integrals are in physical area; normalise to unit-weight convention
        out[s:s + chunk] = np.einsum("q,pqkd,pqld->pkl", w, da, inner) / areas_b[:, None, None]
    return out


def assemble_inductance(mesh: Mesh, qcfg: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """Dense Galerkin inductance matrix L [H] of the interior-edge basis."""
    qcfg.validate()
    corners = mesh.corners
    areas = mesh.areas
    signs = mesh.tri_signs.astype(float)
    dofs = np.where(mesh.tri_dofs >= 0, mesh.tri_dofs, mesh.n_e)
    n = mesh.n_e + 1
    L = np.zeros((n, n))
    (fa, fb), (na, nb), (sa, sb) = _pair_classes(mesh)
    blocks = [
        (fa, fb, _far_block(corners, fa, fb, qcfg.far_level)),
        (na, nb, _near_block(corners, na, nb, qcfg.near_level, qcfg.duffy_order)),
        (sa, sb, _near_block(corners, sa, sb, qcfg.self_level, qcfg.duffy_order)),
    ]
    for ta, tb, blk in blocks:
        if ta.size == 0:
            continue
        if ta is sa:
            blk = 0.5 * (blk + np.transpose(blk, (0, 2, 1)))
        # block integrals use unit-sum weights: multiply by A_a A_b, basis factors s/(2A)
        scale = (signs[ta][:, :, None] * signs[tb][:, None, :]) / 4.0
        blk = blk * scale
        rows = np.broadcast_to(dofs[ta][:, :, None], blk.shape)
        cols = np.broadcast_to(dofs[tb][:, None, :], blk.shape)
        np.add.at(L, (rows.ravel(), cols.ravel()), blk.ravel())
        off = ta != tb
        np.add.at(L, (cols[off].ravel(), rows[off].ravel()), blk[off].ravel())
    L = L[:-1, :-1] * (MU0 / (4 * math.pi))
    return 0.5 * (L + L.T)


# ---------------------------------------------------------------- nonlinearity


def _element_eta(tables, material, i):
    K = tables.sheet_current(i)
    k = np.linalg.norm(K, axis=1)
    return K, k, sheet_resistivity(material, k)


def assemble_resistance(mesh_or_tables, material: MaterialParams, i) -> sp.csr_matrix:
    """R(i) = sum_T eta(|K_T|) M_T with K_T the centroid sheet current [ohm]."""
    tables = _tables(mesh_or_tables)
    _, _, eta = _element_eta(tables, material, np.asarray(i, dtype=float))
    return _scatter_sparse(tables, eta[:, None, None] * tables.M)


def gram_matrix(mesh_or_tables) -> sp.csr_matrix:
    tables = _tables(mesh_or_tables)
    return _scatter_sparse(tables, tables.M)


def nonlinearity(tables: ElementTables, material: MaterialParams, i):
    """f(i) = R(i) i."""
    _, _, eta = _element_eta(tables, material, i)
    floc = eta[:, None] * np.einsum("fkl,fl->fk", tables.M, tables.local(i))
    return np.bincount(tables.dofs.ravel(), floc.ravel(), minlength=tables.n_e + 1)[:-1]


def _jacobian_blocks(tables, material, K, k, eta, i_loc):
    dm = sheet_resistivity_derivative(material, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(k > 0, dm / k, 0.0)
    Mi = np.einsum("fkl,fl->fk", tables.M, i_loc)
    KC = np.einsum("fd,fdl->fl", K, tables.C)                 # d|K|/di_loc * |K|
    return eta[:, None, None] * tables.M + coef[:, None, None] * Mi[:, :, None] * KC[:, None, :]


def assemble_nl_jacobian(mesh_or_tables, material: MaterialParams, i, dense=True):
    """Jacobian of f(i) = R(i) i: R(i) + sum_T eta'(|K_T|)/|K_T| (M_T i)(K_T^T C_T)."""
    tables = _tables(mesh_or_tables)
    i = np.asarray(i, dtype=float)
    K, k, eta = _element_eta(tables, material, i)
    blocks = _jacobian_blocks(tables, material, K, k, eta, tables.local(i))
    if not dense:
        return _scatter_sparse(tables, blocks)
    return _scatter_dense(tables, blocks)


def nonlinearity_and_jacobian(tables, material, i):
    K, k, eta = _element_eta(tables, material, i)
    i_loc = tables.local(i)
    floc = eta[:, None] * np.einsum("fkl,fl->fk", tables.M, i_loc)
    f = np.bincount(tables.dofs.ravel(), floc.ravel(), minlength=tables.n_e + 1)[:-1]
    return f, _scatter_dense(tables, _jacobian_blocks(tables, material, K, k, eta, i_loc))


def _scatter_dense(tables, blocks):
    n = tables.n_e + 1
    out = np.zeros((n, n))
    rows = np.broadcast_to(tables.dofs[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(tables.dofs[:, None, :], blocks.shape).ravel()
    np.add.at(out, (rows, cols), blocks.ravel())
    return out[:-1, :-1]


def _scatter_sparse(tables, blocks):
    n = tables.n_e + 1
    rows = np.broadcast_to(tables.dofs[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(tables.dofs[:, None, :], blocks.shape).ravel()
    m = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return m[:-1, :-1].tocsr()


def _tables(mesh_or_tables):
    if isinstance(mesh_or_tables, ElementTables):
        return mesh_or_tables
    if isinstance(mesh_or_tables, FomOperators):
        return mesh_or_tables.tables
    return element_tables(mesh_or_tables)


# ---------------------------------------------------------------- source


def source_geometry(mesh: Mesh, direction=(0.0, 1.0, 0.0)) -> np.ndarray:
    """int w_h . E dS for the unit-rate induced field E = -(d x r) (= [-z, 0, x] for d = y)."""
    corners = mesh.corners
    bary, w = quad.DUNAVANT7
    pts = quad.map_points(corners, bary)                      # (n_f, q, 3)
    E = -np.cross(np.asarray(direction, dtype=float), pts)
    signs = mesh.tri_signs.astype(float)
    d = pts[:, :, None, :] - corners[:, None, :, :]           # (n_f, q, slot, 3)
    # (1/(2A)) * A * sum_q w_q (r_q - p_k).E_q
    loc = 0.5 * signs * np.einsum("q,fqkd,fqd->fk", w, d, E)
    dofs = np.where(mesh.tri_dofs >= 0, mesh.tri_dofs, mesh.n_e)
    return np.bincount(dofs.ravel(), loc.ravel(), minlength=mesh.n_e + 1)[:-1]


def assemble_source(mesh_or_ops, excitation: ExcitationSpec, t: float) -> np.ndarray:
    """e_s(t) [V] = dB/dt(t) * int w_h . (-(d x r)) dS."""
    if isinstance(mesh_or_ops, FomOperators):
        geo = mesh_or_ops.source_shape(excitation.direction)
    else:
        geo = source_geometry(mesh_or_ops, excitation.direction)
    return excitation.field_rate(t) * geo


# ---------------------------------------------------------------- bundle


@dataclass(eq=False)
class FomOperators:
    mesh: Mesh
    L: np.ndarray
    G: sp.csr_matrix
    material: MaterialParams
    excitation: ExcitationSpec
    tables: ElementTables
    quadrature: QuadratureConfig = QuadratureConfig()
    _source_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_e(self):
        return self.mesh.n_e

    @property
    def n_f(self):
        return self.mesh.n_f

    def source_shape(self, direction=None):
        direction = tuple(self.excitation.direction if direction is None else direction)
        if direction not in self._source_cache:
            self._source_cache[direction] = source_geometry(self.mesh, direction)
        return self._source_cache[direction]

    def source(self, t, excitation=None):
        exc = self.excitation if excitation is None else excitation
        return exc.field_rate(t) * self.source_shape(exc.direction)

    def with_material(self, material):
        return replace(self, material=material, _source_cache=self._source_cache)

    def with_excitation(self, excitation):
        return replace(self, excitation=excitation, _source_cache=self._source_cache)


def build_fom_operators(mesh, material=None, excitation=None, qcfg=QuadratureConfig(), L=None):
    material = MaterialParams() if material is None else material
    excitation = ExcitationSpec() if excitation is None else excitation
    material.validate()
    excitation.validate()
    if L is None:
        L = assemble_inductance(mesh, qcfg)
    return FomOperators(mesh=mesh, L=L, G=incidence_matrix(mesh), material=material,
                        excitation=excitation, tables=element_tables(mesh), quadrature=qcfg)
