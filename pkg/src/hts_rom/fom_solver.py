"""Backward-Euler / Newton integration of the full-order saddle-point DAE.

Per step we solve, for x = (i, phi),

    L (i - i_n)/dt + f(i) + G^T phi = e_s(t_{n+1})
    G i = 0

with one face potential pinned per connected component (the potentials are
otherwise defined only up to a constant).
"""
import logging
from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg as sla

from .assembly import FomOperators, ExcitationSpec, nonlinearity, nonlinearity_and_jacobian
from .errors import ConfigError, GaugeError, StepFailure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1.25e-4
    n_steps: int = 280
    newton_tol: float = 1e-10       # [V], 2-norm of the current-equation residual
    newton_max_iter: int = 50
    ls_shrink: float = 0.5
    ls_max_halvings: int = 20

    def validate(self):
        errs = []
        if not self.dt > 0:
            errs.append(("solver.dt", f"must be > 0, got {self.dt}"))
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            errs.append(("solver.n_steps", f"must be an integer >= 1, got {self.n_steps}"))
        if not self.newton_tol > 0:
            errs.append(("solver.newton_tol", f"must be > 0, got {self.newton_tol}"))
        if not (isinstance(self.newton_max_iter, (int, np.integer)) and self.newton_max_iter >= 1):
            errs.append(("solver.newton_max_iter", f"must be >= 1, got {self.newton_max_iter}"))
        if not 0 < self.ls_shrink < 1:
            errs.append(("solver.ls_shrink", f"must lie in (0, 1), got {self.ls_shrink}"))
        if errs:
            raise ConfigError(errs)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray         # (N+1,)
    currents: np.ndarray      # (n_e, N+1) [A]
    potentials: np.ndarray    # (n_f, N+1) [V]
    nonlinearity: np.ndarray  # (n_e, N) f(i) at the converged states 1..N [V]
    iterations: np.ndarray    # (N,)

    @property
    def n_steps(self):
        return len(self.times) - 1


class SaddleSolver:
    """Dense LU solves of [[A, B^T], [B, 0]] for a fixed constraint block B (m x n)."""

    def __init__(self, B):
        self.B = np.asarray(B, dtype=float)

    def factor(self, A, Bt_scale=1.0):
        n, m = A.shape[0], self.B.shape[0]
        K = np.zeros((n + m, n + m))
        K[:n, :n] = A
        K[:n, n:] = Bt_scale * self.B.T
        K[n:, :n] = self.B
        lu = sla.lu_factor(K, check_finite=False)
        d = np.abs(np.diag(lu[0]))
        if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * d.max():
            raise GaugeError("singular saddle-point matrix (check gauge pinning)")
        return lu

    @staticmethod
    def solve(lu, rhs):
        return sla.lu_solve(lu, rhs, check_finite=False)


def _gauge(ops: FomOperators):
    pinned = ops.mesh.gauge_faces()
    free = np.setdiff1d(np.arange(ops.n_f), pinned)
    return free, ops.G.toarray()[free]


class FomStepper:
    """Caches the gauge-reduced incidence for repeated Newton steps."""

    def __init__(self, ops: FomOperators, cfg: SolverConfig):
        cfg.validate()
        self.ops = ops
        self.cfg = cfg
        self.free, Gt = _gauge(ops)
        self.saddle = SaddleSolver(Gt)
        self.Ldt = ops.L / cfg.dt

    def residual(self, i, phi_free, i_prev, e):
        ops = self.ops
        f = nonlinearity(ops.tables, ops.material, i)
        r1 = self.Ldt @ (i - i_prev) + f + self.saddle.B.T @ phi_free - e
        r2 = self.saddle.B @ i
        return r1, r2

    def step(self, i_prev, phi_prev, e, step_index=None):
        """One backward-Euler step; returns (i, phi, newton_iterations)."""
        ops, cfg = self.ops, self.cfg
        n = ops.n_e
        i = i_prev.copy()
        q = phi_prev[self.free].copy()
        r1, r2 = self.residual(i, q, i_prev, e)
        norm = np.linalg.norm(r1)
        for it in range(1, cfg.newton_max_iter + 1):
            _, J = nonlinearity_and_jacobian(ops.tables, ops.material, i)
            lu = self.saddle.factor(self.Ldt + J)
            delta = -SaddleSolver.solve(lu, np.concatenate([r1, r2]))
            alpha = 1.0
            for _ in range(cfg.ls_max_halvings + 1):
                i_try = i + alpha * delta[:n]
                q_try = q + alpha * delta[n:]
                t1, t2 = self.residual(i_try, q_try, i_prev, e)
                t_norm = np.linalg.norm(t1)
                if t_norm < norm or t_norm <= cfg.newton_tol:
                    break
                alpha *= cfg.ls_shrink
            else:
                raise StepFailure("line search failed to reduce the residual",
                                  step=step_index, residual=norm)
            i, q, r1, r2, norm = i_try, q_try, t1, t2, t_norm
            if norm <= cfg.newton_tol:
                phi = np.zeros(ops.n_f)
                phi[self.free] = q
                return i, phi, it
        raise StepFailure(f"Newton did not converge in {cfg.newton_max_iter} iterations",
                          step=step_index, residual=norm)


def newton_step(ops: FomOperators, state, t_next, cfg: SolverConfig, excitation=None):
    """Advance (i_n, phi_n) to t_next. Returns (i, phi, iterations)."""
    i_prev, phi_prev = (np.asarray(s, dtype=float) for s in state)
    e = ops.source(t_next, excitation)
    return FomStepper(ops, cfg).step(i_prev, phi_prev, e)


def run_transient(ops: FomOperators, excitation: ExcitationSpec, cfg: SolverConfig) -> Trajectory:
    """Integrate from the zero state over cfg.n_steps steps of cfg.dt."""
    excitation.validate()
    stepper = FomStepper(ops, cfg)
    N = cfg.n_steps
    times = np.arange(N + 1) * cfg.dt
    I = np.zeros((ops.n_e, N + 1))
    P = np.zeros((ops.n_f, N + 1))
    F = np.zeros((ops.n_e, N))
    its = np.zeros(N, dtype=np.int64)
    shape = ops.source_shape(excitation.direction)
    for n in range(N):
        e = excitation.field_rate(times[n + 1]) * shape
        i, phi, its[n] = stepper.step(I[:, n], P[:, n], e, step_index=n + 1)
        I[:, n + 1], P[:, n + 1] = i, phi
        F[:, n] = nonlinearity(ops.tables, ops.material, i)
    log.info("transient B0=%g f=%g: %d steps, mean Newton iterations %.2f",
             excitation.B0, excitation.freq, N, its.mean())
    return Trajectory(times=times, currents=I, potentials=P, nonlinearity=F, iterations=its)


def check_continuity(trajectory, G) -> float:
    """max_k ||G i_k|| / (1 + ||i_k||)."""
    I = trajectory.currents if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    div = np.linalg.norm(G @ I, axis=0)
    return float(np.max(div / (1.0 + np.linalg.norm(I, axis=0)))) if I.size else 0.0
