import numpy as np
import pytest
from hypothesis import given, strategies as st

from hts_rom.errors import DomainError
from hts_rom.material import (MaterialParams, sheet_resistivity, sheet_resistivity_derivative)

MAT = MaterialParams()


def test_critical_values_from_volume_quantities():
    assert MAT.K_c == pytest.approx(23_600.0)
    assert MAT.eta_c == pytest.approx(4.2373e-9, rel=1e-4)
    assert sheet_resistivity(MAT, MAT.K_c) == pytest.approx(MAT.eta_c + MAT.eta_floor, rel=1e-14)


def test_zero_current_gives_floor():
    assert sheet_resistivity(MAT, 0.0) == MAT.eta_floor


def test_twice_critical():
    expected = MAT.eta_c * 2.0 ** 24 + MAT.eta_floor
    assert sheet_resistivity(MAT, 2 * MAT.K_c) == pytest.approx(expected, rel=1e-14)


def test_floor_does_not_perturb_loss_at_critical_current():
    assert MAT.eta_floor / MAT.eta_c < 1e-6


def test_negative_current_rejected():
    with pytest.raises(DomainError):
        sheet_resistivity(MAT, -1.0)


def test_linear_material_has_zero_derivative():
    lin = MaterialParams(n_exp=1.0)
    np.testing.assert_array_equal(sheet_resistivity_derivative(lin, np.linspace(0, 5e4, 7)), 0.0)


def test_derivative_at_critical():
    assert sheet_resistivity_derivative(MAT, MAT.K_c) == pytest.approx(24 * MAT.E_c / MAT.K_c ** 2, rel=1e-14)


def test_derivative_matches_finite_differences(rng):
    k = rng.uniform(0.1, 3.0, 20) * MAT.K_c
    h = 1e-6 * k
    bare = MaterialParams(eta_floor=0.0)  # the floor has zero slope but swamps the law near 0.1 K_c
    fd = (sheet_resistivity(bare, k + h) - sheet_resistivity(bare, k - h)) / (2 * h)
    np.testing.assert_allclose(sheet_resistivity_derivative(MAT, k), fd, rtol=1e-6)


@given(a=st.floats(0, 1e5), b=st.floats(0, 1e5))
def test_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert sheet_resistivity(MAT, lo) <= sheet_resistivity(MAT, hi)


@given(s=st.floats(0.01, 3.0))
def test_power_law_scaling(s):
    lhs = sheet_resistivity(MAT, s * MAT.K_c) - MAT.eta_floor
    rhs = s ** 24 * (sheet_resistivity(MAT, MAT.K_c) - MAT.eta_floor)
    assert lhs == pytest.approx(rhs, rel=1e-9)


@pytest.mark.parametrize("kwargs", [dict(E_c=0.0), dict(K_c=-1.0), dict(n_exp=0.5), dict(eta_floor=-1.0)])
def test_invalid_parameters(kwargs):
    with pytest.raises(DomainError):
        MaterialParams(**kwargs).validate()
