"""AC losses, error statistics and the per-step FLOP model."""
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .assembly import ElementTables, element_tables
from .errors import DimensionError
from .geometry import Mesh
from .material import MaterialParams, sheet_resistivity

PAPER_FLOPS = {"deim_newton": 45_330_701, "node": 257_395, "deim_lagged": 199_000}
PAPER_DIMS = {"n_e": 4518, "n_f": 3140, "r_i": 48, "r_phi": 5, "n_p": 150,
              "hidden": (140, 140, 140, 140)}


def _tables(mesh_or_tables):
    return mesh_or_tables if isinstance(mesh_or_tables, ElementTables) else element_tables(mesh_or_tables)


def element_magnitudes(mesh_or_tables, currents):
    """Centroid sheet-current magnitudes |K| [A/m], shape (n_f,) or (n_f, N)."""
    tables = _tables(mesh_or_tables)
    K = tables.sheet_current(currents)
    return np.linalg.norm(K, axis=-1)


def ac_losses(mesh_or_tables, material: MaterialParams, currents):
    """p(t) = sum_T eta(|K_T|) |K_T|^2 A_T [W] for currents (n_e,) or (n_e, N)."""
    tables = _tables(mesh_or_tables)
    k = element_magnitudes(tables, currents)
    eta = sheet_resistivity(material, k)
    if k.ndim == 1:
        return float(np.sum(eta * k ** 2 * tables.areas))
    return np.einsum("fn,f->n", eta * k ** 2, tables.areas)


def nearest_rank(sorted_values, q, axis=0):
    """Nearest-rank percentile of data already sorted along ``axis``."""
    n = sorted_values.shape[axis]
    k = max(1, math.ceil(q / 100.0 * n))
    return np.take(sorted_values, k - 1, axis=axis)


@dataclass(eq=False)
class ErrorReport:
    times: np.ndarray
    mean: np.ndarray      # per step
    p95: np.ndarray
    max: np.ndarray
    summary: dict         # mean / p95 / max over all states and steps

    def rows(self):
        return [(float(t), float(a), float(b), float(c))
                for t, a, b, c in zip(self.times, self.mean, self.p95, self.max)]


def error_stats(rom_values, fom_values, tables=None, times=None, skip_initial=False) -> ErrorReport:
    """Absolute-error statistics across states at each step and over the whole run.

    With ``tables`` the inputs are edge currents (n_e, N) and are converted to
    element |K| [A/m] first; otherwise they are already per-state values (n, N).
    """
    a, b = np.asarray(rom_values, dtype=float), np.asarray(fom_values, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"trajectory grids differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if tables is not None:
        a, b = element_magnitudes(tables, a), element_magnitudes(tables, b)
    if skip_initial:
        a, b = a[:, 1:], b[:, 1:]
    err = np.abs(a - b)
    if times is None:
        times = np.arange(err.shape[1], dtype=float)
    elif skip_initial:
        times = np.asarray(times)[1:]
    if len(times) != err.shape[1]:
        raise DimensionError("time grid does not match the trajectories")
    srt = np.sort(err, axis=0)
    flat = np.sort(err.ravel())
    summary = {"mean": float(flat.mean()), "p95": float(nearest_rank(flat, 95)), "max": float(flat[-1])}
    return ErrorReport(np.asarray(times, dtype=float), err.mean(axis=0), nearest_rank(srt, 95),
                       srt[-1], summary)


def pod_floor(V, fom_currents, tables):
    """Error of the best representation V V^T i of the FOM currents (projection floor)."""
    V = np.asarray(V)
    return error_stats(V @ (V.T @ fom_currents), fom_currents, tables)


# ---------------------------------------------------------------- FLOP model
# Counting convention: a multiply-add counts 2; activations and scalar
# nonlinear evaluations count 1 each (power laws and exponentials included).


def matvec(m, n):
    return 2 * m * n


def lu_solve(s):
    return (2.0 / 3.0) * s ** 3 + 2 * s ** 2


def mlp_flops(sizes):
    return sum(2 * a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


# per used triangle: K = C loc (3x3 matvec), |K| (3 squares, 2 adds, sqrt),
# eta (power law + floor), M loc (3x3 matvec), eta * (M loc)
TRI_RESIDUAL = matvec(3, 3) + 6 + 3 + matvec(3, 3) + 3
# Jacobian block: eta'/|K| (2), K^T C (3x3), rank-1 outer product and eta M (9 + 9 + 9 adds)
TRI_JACOBIAN = 2 + matvec(3, 3) + 9 + 9 + 9


@dataclass
class FlopReport:
    backend: str
    phases: dict
    per_iteration: float
    iterations: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(self.phases.values()))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BackendDims:
    r_i: int
    r_phi: int = 0                 # active reduced constraint rows
    n_e: int = 0
    n_p: int = 0                   # DEIM points
    n_support_dofs: int = 0        # distinct edge DOFs touched by the selected rows
    n_support_tris: int = 0        # distinct triangles touched by the selected rows
    row_nnz: float = 5.0           # mean support DOFs per selected row
    newton_iterations: float = 1.0
    hidden: tuple = (140, 140, 140, 140)
    output: str = "dense"
    lift: str = "support"          # "support" or "full"


def flop_count(backend, d: BackendDims) -> FlopReport:
    """Per-step operation count for 'node', 'deim-newton' or 'deim-lagged'."""
    r, s = d.r_i, d.r_i + d.r_phi
    if backend == "node":
        n_out = r * r if d.output == "dense" else r * (r + 1) // 2
        phases = {
            "network": 3 * r + mlp_flops([r, *d.hidden, n_out]) + r * r,
            "assembly": 2 * r * r + matvec(r, r) + 2 * r,
            "source": r,
            "linear_solve": lu_solve(s),
            "projections": 0.0,
        }
        return FlopReport("node", phases, float(sum(phases.values())), 1.0)
    if backend not in ("deim-newton", "deim-lagged"):
        raise ValueError(f"unknown backend {backend!r}")
    lift_rows = d.n_e if d.lift == "full" else d.n_support_dofs
    n_tris = d.n_support_tris
    lift = matvec(lift_rows, r)
    if backend == "deim-lagged":
        phases = {
            "lift": lift,
            "element_eval": n_tris * (matvec(3, 3) + 6 + 3),
            "row_assembly": d.n_p * d.row_nnz * 2,
            "projections": 2 * d.n_p * d.row_nnz * r + matvec(r, d.n_p) * r,
            "assembly": 2 * r * r + matvec(r, r) + 2 * r,
            "linear_solve": lu_solve(s),
        }
        return FlopReport(backend, phases, float(sum(phases.values())), 1.0)
    it = d.newton_iterations
    per = {
        "lift": lift,
        "element_eval": n_tris * (TRI_RESIDUAL + TRI_JACOBIAN),
        "row_assembly": d.n_p * 2 + d.n_p * d.row_nnz * 2,
        # Pi (P^T f), and Pi ((P^T J) V_loc) with P^T J sparse (row_nnz entries per row)
        "projections": matvec(r, d.n_p) + 2 * d.n_p * d.row_nnz * r + matvec(r, d.n_p) * r,
        # L_r (i - i_n)/dt, residual sums, L_r/dt + J_r and the update
        "residual": matvec(r, r) + 4 * r + r * r + 2 * s,
        "linear_solve": lu_solve(s),
    }
    per_iter = float(sum(per.values()))
    phases = {k: v * it for k, v in per.items()}
    phases["source"] = r
    return FlopReport(backend, phases, per_iter, float(it))


def deim_dims(rom, op, newton_iterations, hidden=(140, 140, 140, 140), lift="support") -> BackendDims:
    sup = op.support
    return BackendDims(r_i=rom.r_i, r_phi=rom.Q.shape[1], n_e=rom.fom.n_e, n_p=op.n_p,
                       n_support_dofs=len(sup.dofs), n_support_tris=len(sup.used),
                       row_nnz=5.0, newton_iterations=float(newton_iterations), hidden=tuple(hidden),
                       lift=lift)


def paper_dims(newton_iterations, hidden=PAPER_DIMS["hidden"], lift="full") -> BackendDims:
    """Full-scale dimensions; support sizes use the per-row bound (2 triangles, 5 DOFs)."""
    n_p = PAPER_DIMS["n_p"]
    return BackendDims(r_i=PAPER_DIMS["r_i"], r_phi=PAPER_DIMS["r_phi"], n_e=PAPER_DIMS["n_e"],
                       n_p=n_p, n_support_dofs=5 * n_p, n_support_tris=2 * n_p, row_nnz=5.0,
                       newton_iterations=float(newton_iterations), hidden=tuple(hidden), lift=lift)


def flop_summary(dims: BackendDims, reference=None) -> dict:
    """Counts for all backends, the DEIM-Newton / NODE ratio and optional reference values."""
    reports = {b: flop_count(b, dims) for b in ("node", "deim-newton", "deim-lagged")}
    out = {
        "dims": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(dims).items()},
        "backends": {b: r.to_dict() for b, r in reports.items()},
        "deim_newton_over_node": reports["deim-newton"].total / reports["node"].total,
        "node_over_deim_newton": reports["node"].total / reports["deim-newton"].total,
    }
    if reference is not None:
        out["reference"] = dict(reference)
        out["note"] = ("reference counts are quoted for comparison only; the network output "
                       "layer alone (140 x r_i^2 multiply-adds) exceeds the quoted per-step "
                       "network count, so the counting conventions cannot be reconciled")
    return out
