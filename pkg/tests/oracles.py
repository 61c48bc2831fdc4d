"""Independent reference computations used by the test-suite.

Nothing here calls into the code paths it checks.
"""
import math

import numpy as np

MU0 = 4e-7 * math.pi


def _sub_rule(level):
    """Degree-2 interior three-point rule replicated on 4**level sub-triangles."""
    tris = [np.eye(3)]
    for _ in range(level):
        nxt = []
        for a, b, c in tris:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]),
                    np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = nxt
    mids = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    pts = np.concatenate([mids @ t for t in tris])
    return pts, np.full(len(pts), 1.0 / len(pts))


def planar_potentials(tri, obs):
    """Closed-form int_T 1/R dS' and int_T r'/R dS' for points ``obs`` in the plane of ``tri``."""
    a, b, c = tri
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n)
    I0 = np.zeros(len(obs))
    Igrad = np.zeros((len(obs), 3))
    for v0, v1 in ((a, b), (b, c), (c, a)):
        t = (v1 - v0) / np.linalg.norm(v1 - v0)
        u = np.cross(t, n)                         # outward in-plane normal
        P = (v0 - obs) @ u
        lm = (v0 - obs) @ t
        lp = (v1 - obs) @ t
        Rm = np.linalg.norm(v0 - obs, axis=1)
        Rp = np.linalg.norm(v1 - obs, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_term = np.where(np.abs(P) > 1e-300, np.log((Rp + lp) / (Rm + lm)), 0.0)
            absP = np.abs(P)
            ash = np.where(absP > 1e-300, np.arcsinh(lp / absP) - np.arcsinh(lm / absP), 0.0)
        I0 += P * log_term
        # int_edge R dl = 1/2 [l R + P^2 asinh(l/|P|)]
        edge_int = 0.5 * (lp * Rp - lm * Rm + P ** 2 * ash)
        Igrad += edge_int[:, None] * u[None, :]
    # int (r' - r)/R = int grad' R = sum_edges u int R dl
    I1 = Igrad + I0[:, None] * obs
    return I0, I1


def rwg_pair_inductance(tri_a, opp_a, sign_a, tri_b, opp_b, sign_b, level=5):
    """mu0/(4 pi) int_a int_b w_a . w_b / R with w = s (r - p)/(2A); coplanar triangles only."""
    bary, w = _sub_rule(level)
    area_a = 0.5 * np.linalg.norm(np.cross(tri_a[1] - tri_a[0], tri_a[2] - tri_a[0]))
    area_b = 0.5 * np.linalg.norm(np.cross(tri_b[1] - tri_b[0], tri_b[2] - tri_b[0]))
    pts = bary @ tri_a
    I0, I1 = planar_potentials(tri_b, pts)
    inner = I1 - I0[:, None] * opp_b
    val = area_a * np.sum(w * np.einsum("qd,qd->q", pts - opp_a, inner))
    val *= sign_a * sign_b / (4 * area_a * area_b)
    return MU0 / (4 * math.pi) * val


def brute_force_interior_edges(triangles):
    """Edges shared by exactly two triangles, by an explicit pairwise scan."""
    found = []
    tris = [set(map(int, t)) for t in triangles]
    for a in range(len(tris)):
        for b in range(a + 1, len(tris)):
            common = tris[a] & tris[b]
            if len(common) == 2:
                found.append(tuple(sorted(common)))
    return sorted(found)


def deim_greedy_reference(U):
    """Textbook DEIM point selection (Chaturantabut & Sorensen), written from the pseudocode."""
    n, m = U.shape
    first = max(range(n), key=lambda j: abs(U[j, 0]))
    idx = [first]
    for ell in range(1, m):
        u = U[:, ell]
        Usel = U[idx, :ell]
        c = np.linalg.lstsq(Usel, u[idx], rcond=None)[0]
        r = u - U[:, :ell] @ c
        idx.append(max(range(n), key=lambda j: abs(r[j])))
    return idx


def nearest_rank_percentile(values, q):
    s = sorted(float(v) for v in np.ravel(values))
    k = max(1, math.ceil(q / 100.0 * len(s)))
    return s[k - 1]


def linear_modal_solution(L, R, G, shape, B0, freq, times, backward_euler_dt=None):
    """Currents of the linear DAE L i' + R i + G^T phi = B0 w cos(w t) shape, G i = 0, i(0) = 0.

    The constraint is removed with an orthonormal null-space basis Z of G and the
    projected ODE is diagonalised by the generalised eigenproblem (Z^T R Z, Z^T L Z).
    Each mode is then integrated in closed form, or, with ``backward_euler_dt``,
    by the scalar backward-Euler recursion on the same modal decomposition.
    """
    import scipy.linalg as sla
    Z = sla.null_space(np.asarray(G))
    lam, W = sla.eigh(Z.T @ R @ Z, Z.T @ L @ Z)
    w = 2 * math.pi * freq
    b = W.T @ (Z.T @ shape)
    t = np.asarray(times, dtype=float)
    if backward_euler_dt is None:
        y = np.outer(b * B0 * w / (lam ** 2 + w ** 2), np.ones_like(t)) * (
            lam[:, None] * np.cos(w * t) + w * np.sin(w * t) - lam[:, None] * np.exp(-np.outer(lam, t)))
    else:
        h = backward_euler_dt
        y = np.zeros((len(lam), len(t)))
        for k in range(1, len(t)):
            y[:, k] = (y[:, k - 1] + h * b * B0 * w * math.cos(w * t[k])) / (1 + h * lam)
    return Z @ W @ y
