"""Structure-preserving POD: separate bases for currents and potentials.

Currents that satisfy continuity span a subspace of ker(G), so G V_i and
with it the projected constraint G_r = V_phi^T G V_i vanish up to round-off.
The reduced saddle systems therefore keep only the numerically nonzero range
of G_r (``RomOperators.Q``); when it is empty the reduced potentials drop out
of the current dynamics and are returned as zero.
"""
from dataclasses import dataclass, field

import numpy as np

from .assembly import FomOperators, ExcitationSpec
from .errors import ConfigError, DimensionError, StepFailure
from .fom_solver import SaddleSolver, SolverConfig

CONSTRAINT_RTOL = 1e-8


def energy_ratio(sigma, r, criterion="sum"):
    """Retained energy for the first r singular values.

    ``criterion="sum"`` uses sum(sigma_k), ``"squared"`` the usual sum(sigma_k^2).
    """
    s = np.asarray(sigma, dtype=float)
    if criterion == "squared":
        s = s ** 2
    elif criterion != "sum":
        raise ConfigError([("pod.criterion", f"unknown criterion {criterion!r}")])
    # sequential prefix sums: monotone in r under rounding, unlike pairwise sums
    cum = np.cumsum(s)
    if len(cum) == 0 or cum[-1] == 0:
        return 1.0
    return float(cum[r - 1] / cum[-1]) if r > 0 else 0.0


def truncation_rank(sigma, target, criterion="sum"):
    if not 0 < target <= 1:
        raise ConfigError([("pod.energy", f"target must lie in (0, 1], got {target}")])
    s = np.asarray(sigma, dtype=float)
    w = s ** 2 if criterion == "squared" else s
    if w.sum() == 0:
        return 1
    cum = np.cumsum(w) / w.sum()
    return int(min(np.searchsorted(cum, target * (1 - 1e-15)) + 1, len(s)))


def svd_basis(X, target=None, rank=None, criterion="sum"):
    """Left singular vectors of X truncated by energy target or fixed rank."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise DimensionError("empty snapshot matrix", field="snapshots")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if rank is None:
        rank = truncation_rank(s, 0.9999 if target is None else target, criterion)
    elif not 1 <= rank <= min(X.shape):
        raise ConfigError([("pod.rank", f"rank {rank} outside [1, {min(X.shape)}]")])
    # fix the sign of each mode for reproducibility across LAPACK builds
    U = U[:, :rank] * np.sign(U[np.argmax(np.abs(U[:, :rank]), axis=0), np.arange(rank)])
    return U, s, rank


@dataclass(eq=False)
class PodBasis:
    V_i: np.ndarray
    V_phi: np.ndarray
    sigma_i: np.ndarray
    sigma_phi: np.ndarray
    criterion: str = "sum"
    meta: dict = field(default_factory=dict)

    @property
    def r_i(self):
        return self.V_i.shape[1]

    @property
    def r_phi(self):
        return self.V_phi.shape[1]

    @property
    def energy_i(self):
        return energy_ratio(self.sigma_i, self.r_i, self.criterion)

    @property
    def energy_phi(self):
        return energy_ratio(self.sigma_phi, self.r_phi, self.criterion)

    def restrict_currents(self, i):
        return restrict(self.V_i, i)

    def lift_currents(self, i_r):
        return lift(self.V_i, i_r)

    def restrict_potentials(self, phi):
        return restrict(self.V_phi, phi)

    def lift_potentials(self, phi_r):
        return lift(self.V_phi, phi_r)


def build_pod(I, Phi, energy_i=0.9999, energy_phi=0.9999, rank_i=None, rank_phi=None,
              criterion="sum", meta=None) -> PodBasis:
    """SVD of current and potential snapshots (not mean-centred), truncated separately."""
    V_i, s_i, _ = svd_basis(I, energy_i, rank_i, criterion)
    V_p, s_p, _ = svd_basis(Phi, energy_phi, rank_phi, criterion)
    return PodBasis(V_i, V_p, s_i, s_p, criterion, dict(meta or {}))


def restrict(V, x):
    V = np.asarray(V)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != V.shape[0]:
        raise DimensionError(f"expected leading dimension {V.shape[0]}, got {x.shape[0]}")
    return V.T @ x


def lift(V, x_r):
    V = np.asarray(V)
    x_r = np.asarray(x_r, dtype=float)
    if x_r.shape[0] != V.shape[1]:
        raise DimensionError(f"expected leading dimension {V.shape[1]}, got {x_r.shape[0]}")
    return V @ x_r


@dataclass(eq=False)
class RomOperators:
    L_r: np.ndarray          # (r_i, r_i)
    G_r: np.ndarray          # (r_phi, r_i)
    Q: np.ndarray            # (r_phi, m) orthonormal basis of the numerical range of G_r
    e_shape_r: np.ndarray    # (r_i,) projected source for unit field rate
    basis: PodBasis
    fom: FomOperators
    direction: tuple = (0.0, 1.0, 0.0)
    G_q: np.ndarray = field(init=False, repr=False)   # active constraint rows Q^T G_r

    def __post_init__(self):
        self.G_q = self.Q.T @ self.G_r

    @property
    def r_i(self):
        return self.L_r.shape[0]

    @property
    def r_phi(self):
        return self.G_r.shape[0]

    def source(self, t, excitation: ExcitationSpec):
        if tuple(excitation.direction) != tuple(self.direction):
            return excitation.field_rate(t) * (self.basis.V_i.T @ self.fom.source_shape(excitation.direction))
        return excitation.field_rate(t) * self.e_shape_r

    def source_sequence(self, excitation, times):
        return np.stack([self.source(t, excitation) for t in times], axis=1)


def project_operators(fom: FomOperators, basis: PodBasis) -> RomOperators:
    """L_r = V_i^T L V_i, G_r = V_phi^T G V_i, e_r = V_i^T e_s."""
    V_i, V_p = basis.V_i, basis.V_phi
    if V_i.shape[0] != fom.n_e or V_p.shape[0] != fom.n_f:
        raise DimensionError(f"basis rows ({V_i.shape[0]}, {V_p.shape[0]}) do not match "
                             f"operators ({fom.n_e}, {fom.n_f})")
    L_r = V_i.T @ fom.L @ V_i
    L_r = 0.5 * (L_r + L_r.T)
    G_r = V_p.T @ (fom.G @ V_i)
    U, s, _ = np.linalg.svd(G_r, full_matrices=False)
    g_scale = np.sqrt(fom.G.multiply(fom.G).sum())
    keep = s > CONSTRAINT_RTOL * g_scale
    direction = tuple(fom.excitation.direction)
    return RomOperators(L_r=L_r, G_r=G_r, Q=U[:, keep], e_shape_r=V_i.T @ fom.source_shape(direction),
                        basis=basis, fom=fom, direction=direction)


@dataclass(eq=False)
class RomTrajectory:
    times: np.ndarray
    currents: np.ndarray      # (r_i, N+1)
    potentials: np.ndarray    # (r_phi, N+1)
    iterations: np.ndarray    # (N,)

    def lift(self, basis: PodBasis):
        return basis.lift_currents(self.currents), basis.lift_potentials(self.potentials)


def reduced_continuity(rom: RomOperators, currents_r) -> float:
    """max_k ||G_r i_r^k|| / (1 + ||i_r^k||)."""
    I = np.atleast_2d(np.asarray(currents_r, dtype=float).T).T
    return float(np.max(np.linalg.norm(rom.G_r @ I, axis=0) / (1 + np.linalg.norm(I, axis=0))))


def linear_reduced_step(rom: RomOperators, R, i_prev, e_next, dt):
    """Solve [[dt R + L_r, dt G_q^T], [G_q, 0]] [i; q] = [L_r i_prev + dt e; 0].

    Returns (i_next, phi_r_next, lu) with the LU factors of the block matrix.
    """
    saddle = SaddleSolver(rom.G_q)
    lu = saddle.factor(dt * R + rom.L_r, Bt_scale=dt)
    rhs = np.concatenate([rom.L_r @ i_prev + dt * e_next, np.zeros(rom.Q.shape[1])])
    x = SaddleSolver.solve(lu, rhs)
    return x[:rom.r_i], rom.Q @ x[rom.r_i:], lu


def reduced_newton_step(rom: RomOperators, nl, i_prev, phi_prev, e_next, cfg: SolverConfig,
                        step_index=None):
    """Backward-Euler step of the reduced nonlinear system.

    ``nl(i_r)`` returns the reduced nonlinearity and its Jacobian (r_i, r_i).
    Returns (i_r, phi_r, iterations).
    """
    r = rom.r_i
    saddle = SaddleSolver(rom.G_q)
    Ldt = rom.L_r / cfg.dt
    Gq = rom.G_q

    def residual(i, q):
        f, J = nl(i)
        return Ldt @ (i - i_prev) + f + Gq.T @ q - e_next, Gq @ i, J

    i = np.array(i_prev, dtype=float)
    q = rom.Q.T @ np.asarray(phi_prev, dtype=float)
    r1, r2, J = residual(i, q)
    norm = np.linalg.norm(r1)
    for it in range(1, cfg.newton_max_iter + 1):
        lu = saddle.factor(Ldt + J)
        delta = -SaddleSolver.solve(lu, np.concatenate([r1, r2]))
        alpha = 1.0
        for _ in range(cfg.ls_max_halvings + 1):
            i_try, q_try = i + alpha * delta[:r], q + alpha * delta[r:]
            t1, t2, J_try = residual(i_try, q_try)
            t_norm = np.linalg.norm(t1)
            if t_norm < norm or t_norm <= cfg.newton_tol:
                break
            alpha *= cfg.ls_shrink
        else:
            raise StepFailure("reduced line search failed", step=step_index, residual=norm)
        i, q, r1, r2, J, norm = i_try, q_try, t1, t2, J_try, t_norm
        if norm <= cfg.newton_tol:
            return i, rom.Q @ q, it
    raise StepFailure(f"reduced Newton did not converge in {cfg.newton_max_iter} iterations",
                      step=step_index, residual=norm)


def galerkin_nonlinearity(rom: RomOperators):
    """Exact projected nonlinearity V^T f(V i_r) with Jacobian V^T J_f V (no hyperreduction)."""
    from .assembly import nonlinearity_and_jacobian
    V = rom.basis.V_i
    fom = rom.fom

    def nl(i_r):
        f, J = nonlinearity_and_jacobian(fom.tables, fom.material, V @ i_r)
        return V.T @ f, V.T @ J @ V
    return nl


def run_reduced_transient(rom: RomOperators, stepper, excitation: ExcitationSpec, dt, n_steps,
                          i0=None, phi0=None) -> RomTrajectory:
    """Generic driver: ``stepper(i, phi, e_next, n)`` returns (i, phi, iterations)."""
    times = np.arange(n_steps + 1) * dt
    I = np.zeros((rom.r_i, n_steps + 1))
    P = np.zeros((rom.r_phi, n_steps + 1))
    if i0 is not None:
        I[:, 0] = i0
    if phi0 is not None:
        P[:, 0] = phi0
    its = np.zeros(n_steps, dtype=np.int64)
    for n in range(n_steps):
        e = rom.source(times[n + 1], excitation)
        I[:, n + 1], P[:, n + 1], its[n] = stepper(I[:, n], P[:, n], e, n + 1)
    return RomTrajectory(times, I, P, its)


def run_galerkin(rom: RomOperators, excitation, cfg: SolverConfig) -> RomTrajectory:
    nl = galerkin_nonlinearity(rom)

    def stepper(i, phi, e, n):
        return reduced_newton_step(rom, nl, i, phi, e, cfg, step_index=n)
    return run_reduced_transient(rom, stepper, excitation, cfg.dt, cfg.n_steps)
