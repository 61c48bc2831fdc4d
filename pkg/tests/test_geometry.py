import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hts_rom.errors import DimensionError, DomainError
from hts_rom.geometry import (HelixSpec, Mesh, TapeSpec, edge_basis_eval, generate_tape_mesh,
                              incidence_matrix, read_mesh, write_mesh)
from oracles import brute_force_interior_edges


def test_smallest_strip():
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 1, 1))
    assert (len(m.vertices), m.n_f, m.n_e) == (4, 2, 1)


def test_2x2_interior_edges_match_pairwise_scan():
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 2, 2))
    assert len(m.vertices) == 9 and m.n_f == 8
    ours = sorted(tuple(e) for e in m.edges[m.interior_edge_ids])
    assert ours == brute_force_interior_edges(m.triangles)


def test_numbering_is_deterministic():
    spec = TapeSpec(0.018, 0.004, 4, 20)
    a, b = generate_tape_mesh(spec), generate_tape_mesh(spec)
    assert (a.n_e, a.n_f) == (216, 160)
    assert a.hash() == b.hash()
    assert np.array_equal(a.edges, b.edges)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 5), nz=st.integers(1, 8), helical=st.booleans())
def test_mesh_invariants(nx, nz, helical):
    helix = HelixSpec(radius=0.02, pitch=0.05) if helical else None
    m = generate_tape_mesh(TapeSpec(0.01, 0.004, nx, nz, helix))
    assert m.n_f == 2 * nx * nz
    assert np.all(m.areas > 0)
    counts = (m.edge_triangles >= 0).sum(axis=1)
    assert set(counts.tolist()) <= {1, 2}
    assert np.all(np.diff(m.interior_edge_ids) > 0)
    # lower triangle index is the "+" side
    tris = m.edge_triangles[m.interior_edge_ids]
    assert np.all(tris[:, 0] < tris[:, 1])
    G = incidence_matrix(m).toarray()
    assert np.all(G.sum(axis=0) == 0)
    assert np.all((G == 1).sum(axis=0) == 1) and np.all((G == -1).sum(axis=0) == 1)
    assert len(np.unique(m.face_components())) == 1


def test_mesh_is_connected():
    m = generate_tape_mesh(TapeSpec(0.01, 0.004, 3, 5))
    assert len(m.gauge_faces()) == 1


def test_two_triangle_incidence():
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 1, 1))
    assert incidence_matrix(m).toarray().tolist() == [[1.0], [-1.0]]


def test_incidence_matches_flux_balance(rng):
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 2, 2))
    G = incidence_matrix(m)
    for _ in range(10):
        i = rng.standard_normal(m.n_e)
        flux = np.zeros(m.n_f)
        for dof, e in enumerate(m.interior_edge_ids):
            plus, minus = m.edge_triangles[e]
            flux[plus] += i[dof]       # current leaves the "+" triangle
            flux[minus] -= i[dof]
        np.testing.assert_allclose(G @ i, flux, atol=1e-14)


@pytest.mark.parametrize("kwargs, field", [
    (dict(length=0.0, width=1.0, nx=1, nz=1), "length"),
    (dict(length=1.0, width=-1.0, nx=1, nz=1), "width"),
    (dict(length=1.0, width=1.0, nx=0, nz=1), "nx"),
    (dict(length=1.0, width=1.0, nx=1, nz=0), "nz"),
    (dict(length=1.0, width=1.0, nx=1, nz=1, helix=HelixSpec(radius=0.1, pitch=1.0)), "helix.radius"),
])
def test_invalid_spec_names_field(kwargs, field):
    with pytest.raises(DimensionError) as exc:
        generate_tape_mesh(TapeSpec(**kwargs))
    assert exc.value.field == field


def test_degenerate_triangle_rejected():
    with pytest.raises(DimensionError):
        Mesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), np.array([[0, 1, 2]]))


def _diag_patch():
    # unit square split along the diagonal (0,0)-(1,1)
    return generate_tape_mesh(TapeSpec(1.0, 1.0, 1, 1))


def test_basis_vanishes_at_opposite_vertex():
    m = _diag_patch()
    e = int(m.interior_edge_ids[0])
    for slot in range(2):
        t = m.edge_triangles[e, slot]
        k = int(np.flatnonzero(m.tri_edges[t] == e)[0])
        p = m.vertices[m.triangles[t, k]]
        np.testing.assert_array_equal(edge_basis_eval(m, e, p), 0.0)


def test_basis_divergence_by_finite_differences():
    m = _diag_patch()
    e = int(m.interior_edge_ids[0])
    for slot, sign in ((0, 1.0), (1, -1.0)):
        t = m.edge_triangles[e, slot]
        c = m.corners[t].mean(axis=0)
        n = np.cross(*(m.corners[t][1:] - m.corners[t][0]))
        n /= np.linalg.norm(n)
        # two orthonormal in-plane directions
        u = m.corners[t][1] - m.corners[t][0]
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        h = 1e-6
        div = sum((edge_basis_eval(m, e, c + h * d) - edge_basis_eval(m, e, c - h * d)) @ d / (2 * h)
                  for d in (u, v))
        # unit total current through the edge: divergence is +-1/A
        assert div == pytest.approx(sign / m.areas[t], rel=1e-8)


def test_normal_trace_continuous_on_shared_edge(rng):
    m = generate_tape_mesh(TapeSpec(0.01, 0.004, 3, 4, HelixSpec(radius=0.02, pitch=0.05)))
    for _ in range(100):
        e = int(rng.choice(m.interior_edge_ids))
        a, b = m.vertices[m.edges[e]]
        s = rng.uniform(0.05, 0.95)
        p = a + s * (b - a)
        t_plus, t_minus = m.edge_triangles[e]
        wp = edge_basis_eval(m, e, p, side="+")
        wm = edge_basis_eval(m, e, p, side="-")
        # in-plane normal to the edge in each triangle, pointing from "+" to "-"
        tan = (b - a) / np.linalg.norm(b - a)

        def outward(t):
            n = np.cross(*(m.corners[t][1:] - m.corners[t][0]))
            nu = np.cross(tan, n / np.linalg.norm(n))
            return nu if (p - m.centroids[t]) @ nu > 0 else -nu
        flux_p = wp @ outward(t_plus)
        flux_m = -(wm @ outward(t_minus))
        assert flux_p == pytest.approx(flux_m, rel=1e-12, abs=1e-12 * abs(flux_p))


def test_basis_rejects_foreign_points():
    m = generate_tape_mesh(TapeSpec(1.0, 1.0, 2, 2))
    e = int(m.interior_edge_ids[0])
    with pytest.raises(DomainError):
        edge_basis_eval(m, e, [10.0, 0.0, 10.0])
    boundary = int(np.flatnonzero(m.edge_triangles[:, 1] < 0)[0])
    with pytest.raises(DomainError):
        edge_basis_eval(m, boundary, m.vertices[m.edges[boundary, 0]])


def test_helix_areas_close_to_flat():
    flat = generate_tape_mesh(TapeSpec(0.02, 0.004, 4, 10))
    wrapped = generate_tape_mesh(TapeSpec(0.02, 0.004, 4, 10, HelixSpec(radius=0.02, pitch=0.03)))
    np.testing.assert_allclose(wrapped.areas, flat.areas, rtol=0.02)


def test_mesh_file_round_trip(tmp_path):
    m = generate_tape_mesh(TapeSpec(0.0123456789, 0.004, 3, 5, HelixSpec(0.02, 0.03, 0.1)))
    write_mesh(m, tmp_path / "m.json")
    back = read_mesh(tmp_path / "m.json")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert back.spec == m.spec
    assert back.hash() == m.hash()
