import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hts_rom.assembly import ExcitationSpec, build_fom_operators
from hts_rom.errors import ConfigError, DimensionError
from hts_rom.fom_solver import SolverConfig, run_transient
from hts_rom.pod import (PodBasis, build_pod, energy_ratio, lift, linear_reduced_step, project_operators,
                         reduced_continuity, restrict, run_galerkin, svd_basis, truncation_rank)

EXC = ExcitationSpec(B0=0.02, freq=50.0)


def orthonormal(rng, n, r):
    return np.linalg.qr(rng.standard_normal((n, r)))[0]


def test_energy_ratio_examples():
    assert energy_ratio([3.0, 1.0], 1) == pytest.approx(0.75)
    assert energy_ratio([3.0, 1.0], 1, "squared") == pytest.approx(0.9)
    assert truncation_rank([3.0, 1.0], 0.75) == 1
    assert truncation_rank([3.0, 1.0], 0.76) == 2


def test_rank_one_snapshots(rng):
    X = np.outer(rng.standard_normal(30), rng.standard_normal(12))
    V, s, r = svd_basis(X, target=0.9999)
    assert r == 1 and energy_ratio(s, r) == pytest.approx(1.0, abs=1e-12)


def test_exact_rank_recovery(rng):
    X = rng.standard_normal((50, 3)) @ rng.standard_normal((3, 40))
    V, _, r = svd_basis(X, rank=3)
    assert np.linalg.norm(X - V @ (V.T @ X)) <= 1e-12 * np.linalg.norm(X)
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-13)


def test_truncation_errors(rng):
    X = rng.standard_normal((6, 4))
    with pytest.raises(ConfigError):
        svd_basis(X, target=1.2)
    with pytest.raises(ConfigError):
        svd_basis(X, rank=5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=30), st.sampled_from(["sum", "squared"]))
def test_energy_ratio_monotone(values, criterion):
    s = np.sort(np.array(values))[::-1]
    eps = [energy_ratio(s, r, criterion) for r in range(1, len(s) + 1)]
    assert np.all(np.diff(eps) >= -1e-15) and eps[-1] == pytest.approx(1.0)
    for target in (0.5, 0.9, 0.999):
        r = truncation_rank(s, target, criterion)
        assert eps[r - 1] >= target * (1 - 1e-12)
        assert r == 1 or eps[r - 2] < target


@pytest.mark.parametrize("criterion", ["sum", "squared"])
def test_energy_ratio_monotone_on_long_spectra(rng, criterion):
    # long spectra with round-off tails, as produced by desk snapshot matrices
    s = np.sort(np.concatenate([np.logspace(3, -4, 300), 1e-13 * rng.random(1100)]))[::-1]
    eps = np.array([energy_ratio(s, r, criterion) for r in range(1, len(s) + 1)])
    assert np.all(np.diff(eps) >= 0) and eps[-1] == 1.0


def test_restrict_lift(rng):
    V = orthonormal(rng, 20, 4)
    x = V @ rng.standard_normal(4)
    np.testing.assert_allclose(lift(V, restrict(V, x)), x, atol=1e-12 * np.linalg.norm(x))
    y = rng.standard_normal(20)
    y -= V @ (V.T @ y)
    assert np.max(np.abs(restrict(V, y))) <= 1e-12 * np.linalg.norm(y)
    with pytest.raises(DimensionError):
        restrict(V, np.zeros(19))
    with pytest.raises(DimensionError):
        lift(V, np.zeros(5))


def test_projection_tail_bound(rng):
    X = rng.standard_normal((40, 25)) * np.logspace(0, -4, 25)
    V, s, r = svd_basis(X, target=0.9)
    resid = np.linalg.norm(X - V @ (V.T @ X)) ** 2
    assert resid == pytest.approx(np.sum(s[r:] ** 2), rel=1e-10)


def test_projected_operators(ops_2x4, rng):
    V_i, V_p = orthonormal(rng, ops_2x4.n_e, 5), orthonormal(rng, ops_2x4.n_f, 3)
    rom = project_operators(ops_2x4, PodBasis(V_i, V_p, np.ones(5), np.ones(3)))
    assert np.allclose(rom.L_r, rom.L_r.T, rtol=0, atol=1e-12 * np.abs(rom.L_r).max())
    assert np.linalg.eigvalsh(rom.L_r).min() > 0
    G = ops_2x4.G.toarray()
    for _ in range(10):
        c = rng.standard_normal(5)
        np.testing.assert_allclose(rom.G_r @ c, V_p.T @ (G @ (V_i @ c)), atol=1e-12 * np.abs(c).sum())
    with pytest.raises(DimensionError):
        project_operators(ops_2x4, PodBasis(V_i[:-1], V_p, np.ones(5), np.ones(3)))


def test_identity_basis_reproduces_fom(ops_2x4):
    cfg = SolverConfig(n_steps=8, newton_tol=1e-13)
    fom = run_transient(ops_2x4, EXC, cfg)
    basis = PodBasis(np.eye(ops_2x4.n_e), np.eye(ops_2x4.n_f), np.ones(ops_2x4.n_e), np.ones(ops_2x4.n_f))
    rom = project_operators(ops_2x4, basis)
    assert rom.Q.shape[1] == ops_2x4.n_f - 1
    red = run_galerkin(rom, EXC, cfg)
    assert np.max(np.abs(red.currents - fom.currents)) <= 1e-10 * np.abs(fom.currents).max()
    # potentials agree up to the constant fixed by the gauge
    dphi = red.potentials - fom.potentials
    dphi -= dphi.mean(axis=0)
    assert np.max(np.abs(dphi)) <= 1e-8 * np.abs(fom.potentials).max()


def test_divergence_free_snapshots_give_vanishing_constraint(ops_2x4):
    fom = run_transient(ops_2x4, EXC, SolverConfig(n_steps=20, newton_tol=1e-13))
    basis = build_pod(fom.currents, fom.potentials, 0.9999, 0.9999)
    rom = project_operators(ops_2x4, basis)
    assert rom.Q.shape[1] == 0
    red = run_galerkin(rom, EXC, SolverConfig(n_steps=20, newton_tol=1e-13))
    assert reduced_continuity(rom, red.currents) <= 1e-10
    assert not np.any(red.potentials)
    I = basis.lift_currents(red.currents)
    assert np.max(np.abs(I - fom.currents)) <= 1e-2 * np.abs(fom.currents).max()


def test_linear_reduced_step_zero(ops_2x4, rng):
    V_i = orthonormal(rng, ops_2x4.n_e, 4)
    rom = project_operators(ops_2x4, PodBasis(V_i, orthonormal(rng, ops_2x4.n_f, 2), np.ones(4), np.ones(2)))
    i, phi, _ = linear_reduced_step(rom, np.eye(4) * 1e-9, np.zeros(4), np.zeros(4), 1e-4)
    assert not np.any(i) and not np.any(phi)
