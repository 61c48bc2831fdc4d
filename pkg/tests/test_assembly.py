import math

import numpy as np
import pytest

from hts_rom.assembly import (ExcitationSpec, QuadratureConfig, assemble_inductance,
                              assemble_nl_jacobian, assemble_resistance, assemble_source,
                              build_fom_operators, element_tables, gram_matrix, nonlinearity,
                              source_geometry)
from hts_rom.errors import ConfigError
from hts_rom.geometry import HelixSpec, Mesh, TapeSpec, generate_tape_mesh
from hts_rom.material import MaterialParams
from oracles import rwg_pair_inductance

MAT = MaterialParams()


def single_edge_strip():
    return generate_tape_mesh(TapeSpec(1.0, 1.0, 1, 1))


def oracle_single_edge(mesh):
    """L11 from closed-form inner integrals over each triangle pair (four pair terms)."""
    e = int(mesh.interior_edge_ids[0])
    total = 0.0
    for sa, ta in zip((1.0, -1.0), mesh.edge_triangles[e]):
        for sb, tb in zip((1.0, -1.0), mesh.edge_triangles[e]):
            ka = int(np.flatnonzero(mesh.tri_edges[ta] == e)[0])
            kb = int(np.flatnonzero(mesh.tri_edges[tb] == e)[0])
            total += rwg_pair_inductance(mesh.corners[ta], mesh.corners[ta][ka], sa,
                                         mesh.corners[tb], mesh.corners[tb][kb], sb, level=5)
    return total


def test_single_edge_inductance_matches_oracle():
    m = single_edge_strip()
    L = assemble_inductance(m)
    ref = oracle_single_edge(m)
    assert L.shape == (1, 1) and L[0, 0] > 0
    assert L[0, 0] == pytest.approx(ref, rel=5e-3)


def test_inductance_symmetric_positive_definite(mesh_2x4, ops_2x4):
    L = ops_2x4.L
    assert np.max(np.abs(L - L.T)) <= 1e-12 * np.max(np.abs(L))
    assert np.linalg.eigvalsh(L).min() > 0


def test_helical_inductance_spd():
    m = generate_tape_mesh(TapeSpec(0.02, 0.004, 2, 6, HelixSpec(radius=0.02, pitch=0.03)))
    L = assemble_inductance(m)
    assert np.linalg.eigvalsh(L).min() > 0


def test_diagonal_dominates_rows(ops_2x4):
    L = ops_2x4.L
    assert np.all(np.abs(np.diag(L)) >= np.max(np.abs(L), axis=1) * (1 - 1e-12))


def test_inductance_scales_with_geometry(mesh_2x4):
    big = Mesh(2.0 * mesh_2x4.vertices, mesh_2x4.triangles)
    L1, L2 = assemble_inductance(mesh_2x4), assemble_inductance(big)
    np.testing.assert_allclose(L2, 2.0 * L1, rtol=1e-10)


def test_quadrature_config_rejected():
    with pytest.raises(ConfigError) as exc:
        assemble_inductance(single_edge_strip(), QuadratureConfig(duffy_order=2))
    assert exc.value.errors[0][0] == "quadrature.duffy_order"


def test_resistance_at_zero_current(mesh_2x4):
    R = assemble_resistance(mesh_2x4, MAT, np.zeros(mesh_2x4.n_e)).toarray()
    M = gram_matrix(mesh_2x4).toarray()
    np.testing.assert_allclose(R, MAT.eta_floor * M, rtol=1e-14, atol=0)
    assert np.linalg.eigvalsh(M).min() > 0


def test_linear_material_resistance_is_constant(mesh_2x4, rng):
    lin = MaterialParams(n_exp=1.0)
    M = gram_matrix(mesh_2x4).toarray()
    R = assemble_resistance(mesh_2x4, lin, rng.standard_normal(mesh_2x4.n_e) * 50).toarray()
    np.testing.assert_allclose(R, (lin.eta_c + lin.eta_floor) * M, rtol=1e-13)


def test_gram_matrix_against_direct_quadrature():
    m = generate_tape_mesh(TapeSpec(1.0, 2.0, 2, 1))
    M = gram_matrix(m).toarray()
    # independent: dense barycentric sampling of each basis function
    bary = np.array([[a, b, 1 - a - b] for a in np.linspace(0, 1, 41) for b in np.linspace(0, 1, 41)
                     if a + b <= 1 + 1e-12])
    ref = np.zeros_like(M)
    for t in range(m.n_f):
        corners = m.corners[t]
        w = np.zeros((m.n_e, 3))
        # Simpson-like exactness is not needed: integrand is quadratic, use a degree-2 rule
        pts = np.array([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]]) @ corners
        vals = np.zeros((3, m.n_e, 3))
        for dof, e in enumerate(m.interior_edge_ids):
            if t in m.edge_triangles[e]:
                from hts_rom.geometry import edge_basis_eval
                side = "+" if m.edge_triangles[e, 0] == t else "-"
                for q, p in enumerate(pts):
                    vals[q, dof] = edge_basis_eval(m, e, p, side=side)
        ref += m.areas[t] / 3 * np.einsum("qid,qjd->ij", vals, vals)
    np.testing.assert_allclose(M, ref, rtol=1e-12, atol=1e-14 * np.abs(ref).max())


def test_resistance_symmetric_psd_for_random_states(rng):
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 2, 2))
    for _ in range(5):
        R = assemble_resistance(m, MAT, rng.standard_normal(m.n_e) * 3e4).toarray()
        assert np.allclose(R, R.T, rtol=0, atol=1e-14 * np.abs(R).max())
        assert np.linalg.eigvalsh(R).min() >= -1e-14 * np.linalg.norm(R, 2)


def test_jacobian_matches_finite_differences(mesh_2x4, rng):
    tables = element_tables(mesh_2x4)
    for _ in range(10):
        i = rng.standard_normal(mesh_2x4.n_e) * 40.0
        J = assemble_nl_jacobian(tables, MAT, i)
        fd = np.zeros_like(J)
        for k in range(mesh_2x4.n_e):
            h = 1e-6 * max(1.0, abs(i[k]))
            ip, im = i.copy(), i.copy()
            ip[k] += h
            im[k] -= h
            fd[:, k] = (nonlinearity(tables, MAT, ip) - nonlinearity(tables, MAT, im)) / (2 * h)
        scale = np.abs(fd).max()
        assert np.max(np.abs(J - fd)) <= 1e-5 * scale


def test_jacobian_limits(mesh_2x4, rng):
    tables = element_tables(mesh_2x4)
    zero = np.zeros(mesh_2x4.n_e)
    np.testing.assert_allclose(assemble_nl_jacobian(tables, MAT, zero),
                               assemble_resistance(tables, MAT, zero).toarray(), rtol=0, atol=0)
    lin = MaterialParams(n_exp=1.0)
    i = rng.standard_normal(mesh_2x4.n_e)
    np.testing.assert_allclose(assemble_nl_jacobian(tables, lin, i),
                               assemble_resistance(tables, lin, i).toarray(), rtol=1e-14)
    sparse = assemble_nl_jacobian(tables, MAT, i * 100, dense=False).toarray()
    np.testing.assert_allclose(sparse, assemble_nl_jacobian(tables, MAT, i * 100), rtol=1e-14)


def test_source_quarter_period_and_zero_amplitude(mesh_2x4):
    exc = ExcitationSpec(B0=0.02, freq=50.0)
    e = assemble_source(mesh_2x4, exc, 1 / (4 * 50.0))
    peak = exc.field_rate(0.0) * np.max(np.abs(source_geometry(mesh_2x4)))
    assert np.max(np.abs(e)) <= 1e-15 * peak
    assert not np.any(assemble_source(mesh_2x4, ExcitationSpec(B0=0.0), 0.0))


def test_source_rate_scalar(mesh_2x4):
    exc = ExcitationSpec(B0=0.02, freq=50.0)
    assert exc.field_rate(0.0) == pytest.approx(6.2832, rel=1e-5)
    np.testing.assert_array_equal(assemble_source(mesh_2x4, exc, 0.0),
                                  exc.field_rate(0.0) * source_geometry(mesh_2x4))


def test_source_linear_in_amplitude(mesh_2x4):
    a = assemble_source(mesh_2x4, ExcitationSpec(B0=0.01), 1e-3)
    b = assemble_source(mesh_2x4, ExcitationSpec(B0=0.02), 1e-3)
    np.testing.assert_array_equal(b, 2 * a)


def test_source_against_pointwise_oracle(mesh_2x4):
    """e_h = int w_h . [-z, 0, x] dS with the field evaluated exactly (it is linear, so a
    degree-2 rule on the product is exact)."""
    from hts_rom.geometry import edge_basis_eval
    m = mesh_2x4
    geo = source_geometry(m)
    ref = np.zeros(m.n_e)
    rule = np.array([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
    for dof, e in enumerate(m.interior_edge_ids):
        for side, t in zip("+-", m.edge_triangles[e]):
            for p in rule @ m.corners[t]:
                E = np.array([-p[2], 0.0, p[0]])
                ref[dof] += m.areas[t] / 3 * edge_basis_eval(m, e, p, side=side) @ E
    np.testing.assert_allclose(geo, ref, rtol=1e-12, atol=1e-14 * np.abs(ref).max())


def test_excitation_validation():
    for bad in (ExcitationSpec(B0=-1.0), ExcitationSpec(freq=0.0), ExcitationSpec(direction=(1, 1, 0))):
        with pytest.raises(ConfigError):
            bad.validate()


def test_operator_bundle(ops_2x4, mesh_2x4):
    assert ops_2x4.G.shape == (mesh_2x4.n_f, mesh_2x4.n_e)
    assert np.all(np.asarray(ops_2x4.G.sum(axis=0)) == 0)
    again = build_fom_operators(mesh_2x4)
    np.testing.assert_array_equal(again.L, ops_2x4.L)
