"""DEIM hyperreduction of the nonlinearity f(i) = R(i) i.

Only the selected rows of f (and of its Jacobian) are ever evaluated online.
Row j of f collects the contributions of the (at most two) triangles that
share edge j, so each selected row needs the currents of at most five edge
DOFs; those are gathered from the reduced state through the matching rows of
V_i.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .assembly import ElementTables, _jacobian_blocks
from .errors import DimensionError, HtsRomError
from .material import MaterialParams, sheet_resistivity
from .pod import (RomOperators, RomTrajectory, linear_reduced_step, reduced_newton_step,
                  run_reduced_transient, svd_basis)
from .fom_solver import SolverConfig

log = logging.getLogger(__name__)


class DeimRankError(HtsRomError):
    """P^T V_f is numerically singular."""


def greedy_points(U):
    """Greedy interpolation indices for the columns of U (n x m)."""
    U = np.asarray(U, dtype=float)
    points = [int(np.argmax(np.abs(U[:, 0])))]
    for k in range(1, U.shape[1]):
        c = np.linalg.solve(U[points, :k], U[points, k])
        res = U[:, k] - U[:, :k] @ c
        points.append(int(np.argmax(np.abs(res))))
    return np.array(points, dtype=np.int64)


@dataclass(frozen=True)
class RowSupport:
    """Element data needed to evaluate the selected rows of f.

    ``tris`` (n_p, 2) triangles of each row (-1 padded), ``slot`` (n_p, 2) local
    slot of the row's edge in each triangle, ``dofs`` (n_u,) union of edge DOFs
    touched, ``used`` (n_t,) triangle ids, ``local_pos`` (n_t, 3) positions of
    each used triangle's slots in ``dofs`` (n_u for boundary slots) and
    ``row_tri`` (n_p, 2) positions of each row's triangles in ``used``.
    """
    tris: np.ndarray
    slot: np.ndarray
    dofs: np.ndarray
    used: np.ndarray
    local_pos: np.ndarray
    row_tri: np.ndarray

    def max_row_support(self, tables):
        sizes = []
        for row in range(len(self.tris)):
            t = self.tris[row][self.tris[row] >= 0]
            d = tables.dofs[t].ravel()
            sizes.append(len(np.unique(d[d < tables.n_e])))
        return max(sizes)


def row_support(tables: ElementTables, points) -> RowSupport:
    points = np.asarray(points)
    n_p = len(points)
    tris = -np.ones((n_p, 2), dtype=np.int64)
    slot = np.zeros((n_p, 2), dtype=np.int64)
    for r, j in enumerate(points):
        t, k = np.nonzero(tables.dofs == j)
        if len(t) == 0:
            raise DimensionError(f"row {j} is not an interior-edge DOF")
        tris[r, :len(t)], slot[r, :len(t)] = t, k
    used = np.unique(tris[tris >= 0])
    d = tables.dofs[used]
    dofs = np.unique(d[d < tables.n_e])
    pos = np.searchsorted(dofs, np.minimum(d, dofs[-1]))
    local_pos = np.where(d < tables.n_e, pos, len(dofs))
    row_tri = np.where(tris >= 0, np.searchsorted(used, np.maximum(tris, 0)), -1)
    return RowSupport(tris, slot, dofs, used, local_pos, row_tri)


@dataclass(eq=False)
class DeimOperator:
    V_f: np.ndarray        # (n_e, r_deim)
    points: np.ndarray     # (n_p,)
    Pi: np.ndarray         # (r_i, n_p) V_i^T V_f (P^T V_f)^{-1}
    support: RowSupport
    cond: float
    sigma_f: np.ndarray = None

    @property
    def n_p(self):
        return len(self.points)

    @property
    def r_deim(self):
        return self.V_f.shape[1]


def build_deim(F, r_deim, V_i, tables: ElementTables, energy=None, criterion="sum") -> DeimOperator:
    """Nonlinearity basis from snapshots F (n_e x m), greedy points and the projected interpolant.

    ``r_deim=None`` selects the rank from ``energy`` like the POD bases.
    """
    V_f, s, r = svd_basis(F, target=energy, rank=r_deim, criterion=criterion)
    points = greedy_points(V_f)
    if len(np.unique(points)) != len(points):
        raise DeimRankError("greedy selection produced a duplicate point")
    PV = V_f[points]
    cond = float(np.linalg.cond(PV))
    if not np.isfinite(cond) or cond > 1e14:
        raise DeimRankError(f"P^T V_f is numerically singular (cond {cond:.3e})")
    Pi = np.linalg.solve(PV.T, (V_i.T @ V_f).T).T
    log.info("DEIM: %d points, cond(P^T V_f) = %.3e", r, cond)
    return DeimOperator(V_f, points, Pi, row_support(tables, points), cond, s)


def deim_apply(op: DeimOperator, selected_values):
    v = np.asarray(selected_values, dtype=float)
    if v.shape[0] != op.n_p:
        raise DimensionError(f"expected {op.n_p} selected values, got {v.shape[0]}")
    return op.Pi @ v


def selected_rows(op: DeimOperator, tables: ElementTables, material: MaterialParams, i_local,
                  jacobian=False):
    """Rows P^T f (and P^T J_f restricted to the support DOFs) from local currents.

    ``i_local`` holds the currents of ``op.support.dofs``. Returns fP (n_p,) and,
    with ``jacobian``, JP (n_p, n_u).
    """
    s = op.support
    pad = np.append(i_local, 0.0)
    loc = pad[s.local_pos]                                  # (n_t, 3)
    C, M = tables.C[s.used], tables.M[s.used]
    K = np.einsum("tdk,tk->td", C, loc)
    k = np.linalg.norm(K, axis=1)
    eta = sheet_resistivity(material, k)
    f_tri = eta[:, None] * np.einsum("tkl,tl->tk", M, loc)  # (n_t, 3)
    valid = s.row_tri >= 0
    rt = np.maximum(s.row_tri, 0)
    fP = np.where(valid, f_tri[rt, s.slot], 0.0).sum(axis=1)
    if not jacobian:
        return fP
    sub = ElementTables(dofs=s.local_pos, C=C, M=M, areas=tables.areas[s.used], n_e=len(s.dofs))
    blocks = _jacobian_blocks(sub, material, K, k, eta, loc)   # (n_t, 3, 3)
    n_u = len(s.dofs)
    JP = np.zeros((op.n_p, n_u + 1))
    for c in range(2):
        rows = np.nonzero(valid[:, c])[0]
        b = blocks[rt[rows, c], s.slot[rows, c], :]          # (rows, 3)
        cols = s.local_pos[rt[rows, c]]
        np.add.at(JP, (np.repeat(rows, 3), cols.ravel()), b.ravel())
    return fP, JP[:, :n_u]


def deim_nonlinearity(rom: RomOperators, op: DeimOperator):
    """Reduced f_r(i_r) = Pi P^T f(V i_r) with Jacobian Pi (P^T J_f) V_i."""
    tables, material = rom.fom.tables, rom.fom.material
    V_loc = rom.basis.V_i[op.support.dofs]

    def nl(i_r):
        fP, JP = selected_rows(op, tables, material, V_loc @ i_r, jacobian=True)
        return op.Pi @ fP, op.Pi @ (JP @ V_loc)
    return nl


def lagged_resistance(rom: RomOperators, op: DeimOperator, i_r):
    """R_r frozen at i_r: Pi P^T R(V i_r) V_i, built from the selected rows only."""
    s = op.support
    tables, material = rom.fom.tables, rom.fom.material
    V_loc = rom.basis.V_i[s.dofs]
    loc = np.append(V_loc @ i_r, 0.0)[s.local_pos]
    K = np.einsum("tdk,tk->td", tables.C[s.used], loc)
    eta = sheet_resistivity(material, np.linalg.norm(K, axis=1))
    blocks = eta[:, None, None] * tables.M[s.used]
    RP = np.zeros((op.n_p, len(s.dofs) + 1))
    valid = s.row_tri >= 0
    rt = np.maximum(s.row_tri, 0)
    for c in range(2):
        rows = np.nonzero(valid[:, c])[0]
        b = blocks[rt[rows, c], s.slot[rows, c], :]
        np.add.at(RP, (np.repeat(rows, 3), s.local_pos[rt[rows, c]].ravel()), b.ravel())
    return op.Pi @ (RP[:, :-1] @ V_loc)


def deim_rom_step_newton(rom: RomOperators, op: DeimOperator, state, t_next, cfg: SolverConfig,
                         excitation=None):
    """Returns (i_r, phi_r, iterations) at t_next."""
    i_r, phi_r = (np.asarray(x, dtype=float) for x in state)
    e = rom.source(t_next, excitation or rom.fom.excitation)
    return reduced_newton_step(rom, deim_nonlinearity(rom, op), i_r, phi_r, e, cfg)


def deim_rom_step_lagged(rom: RomOperators, op: DeimOperator, state, t_next, dt, excitation=None):
    """Single linear solve with R_r evaluated at the previous state. Returns (i_r, phi_r)."""
    i_r = np.asarray(state[0], dtype=float)
    e = rom.source(t_next, excitation or rom.fom.excitation)
    i_new, phi_new, _ = linear_reduced_step(rom, lagged_resistance(rom, op, i_r), i_r, e, dt)
    return i_new, phi_new


def run_deim_newton(rom, op, excitation, cfg: SolverConfig) -> RomTrajectory:
    nl = deim_nonlinearity(rom, op)

    def stepper(i, phi, e, n):
        return reduced_newton_step(rom, nl, i, phi, e, cfg, step_index=n)
    return run_reduced_transient(rom, stepper, excitation, cfg.dt, cfg.n_steps)


def run_deim_lagged(rom, op, excitation, cfg: SolverConfig) -> RomTrajectory:
    def stepper(i, phi, e, n):
        i_new, phi_new, _ = linear_reduced_step(rom, lagged_resistance(rom, op, i), i, e, cfg.dt)
        return i_new, phi_new, 1
    return run_reduced_transient(rom, stepper, excitation, cfg.dt, cfg.n_steps)
