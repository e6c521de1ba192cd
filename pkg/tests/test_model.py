import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from measure_heat import (
    BoundaryAtomError,
    CoefficientField,
    MeasureData,
    NodalField,
    NonEllipticError,
    Truncation,
    build_mesh,
    check_ellipticity,
    discretize_measure,
    t_k,
    theta_k,
    total_variation,
)


def test_ellipticity_examples():
    assert check_ellipticity(CoefficientField.matrix(np.eye(2))) == 1.0
    assert check_ellipticity(CoefficientField.matrix(np.diag([2.0, 0.5]))) == pytest.approx(0.5)
    with pytest.raises(NonEllipticError):
        CoefficientField.matrix(np.diag([1.0, -1.0]))


def test_ellipticity_uses_exact_eigenvalue():
    m = np.array([[1.0, 0.9], [0.9, 1.0]])
    assert check_ellipticity(CoefficientField.matrix(m)) == pytest.approx(0.1)
    # skew part does not contribute to xi.M xi
    skew = np.array([[1.0, 5.0], [-5.0, 1.0]])
    assert check_ellipticity(CoefficientField.matrix(skew)) == pytest.approx(1.0)


def test_declared_alpha_checked():
    assert CoefficientField(1, "constant_scalar", 2.0).alpha == 2.0
    assert CoefficientField(1, "constant_scalar", 2.0, alpha=1.0).alpha == 1.0
    with pytest.raises(NonEllipticError):
        CoefficientField(1, "constant_scalar", 2.0, alpha=3.0)


def test_non_finite_coefficients_rejected():
    with pytest.raises(ValueError):
        CoefficientField.matrix([[1.0, 0.0], [0.0, np.inf]])


def test_per_cell_table_shapes():
    M = CoefficientField.table(np.ones((3, 4)), 2)
    assert M.entries.shape == (3, 4, 2, 2)
    mesh = build_mesh(2, [1, 1], [4, 3])
    assert M.cell_matrices(mesh).shape == (3, 4, 2, 2)
    with pytest.raises(ValueError):
        M.cell_matrices(build_mesh(2, [1, 1], [3, 4]))


def test_transpose_is_derived():
    m = np.array([[2.0, 0.3], [-0.1, 1.0]])
    Mt = CoefficientField.matrix(m).transpose()
    np.testing.assert_array_equal(Mt.entries, m.T)


def test_truncation_examples():
    assert t_k(2, 3) == 2
    assert t_k(2, -5) == -2
    assert t_k(2, 1) == 1
    assert theta_k(1, 2) == 1.5
    assert theta_k(1, -2) == 1.5
    assert Truncation(1.0).primitive(0.5) == 0.125
    with pytest.raises(ValueError):
        theta_k(0.0, 1.0)
    with pytest.raises(ValueError):
        Truncation(-1.0)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([0.01, 0.1, 1.0, 4.0]), st.floats(-20, 20))
def test_theta_derivative_is_t_k(k, s):
    step = 1e-5
    if abs(abs(s) - k) < 2 * step:
        return
    fd = (theta_k(k, s + step) - theta_k(k, s - step)) / (2 * step)
    assert abs(fd - t_k(k, s)) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5), st.floats(-20, 20), st.floats(-20, 20), st.floats(0, 1))
def test_theta_convex_even_nonnegative(k, a, b, lam):
    assert theta_k(k, a) >= 0
    assert theta_k(k, a) == theta_k(k, -a)
    assert theta_k(k, lam * a + (1 - lam) * b) <= lam * theta_k(k, a) + (1 - lam) * theta_k(k, b) + 1e-12


@pytest.mark.parametrize("s", [-3.0, -0.2, 0.7, 2.5])
def test_theta_over_k_tends_to_abs(s):
    k = 1e-6
    assert abs(theta_k(k, s) / k - abs(s)) <= 1e-6


def test_total_variation_examples(unit_mesh):
    assert total_variation(MeasureData.dirac(0.5), unit_mesh) == 1.0
    mu = MeasureData(atoms=(((0.3,), 1.0), ((0.6,), -1.0)))
    assert total_variation(mu, unit_mesh) == 2.0
    dens = MeasureData(density=NodalField(unit_mesh, np.ones(3)))
    assert total_variation(dens, unit_mesh) == pytest.approx(0.75)


def test_boundary_atoms_rejected(unit_mesh):
    for x in (0.0, 1.0, 1.3, -0.1):
        with pytest.raises(BoundaryAtomError, match="strictly inside"):
            discretize_measure(unit_mesh, MeasureData.dirac(x))


def test_measure_algebra(unit_mesh):
    mu = MeasureData.dirac(0.3, 2.0) + MeasureData(density=NodalField(unit_mesh, [1.0, -1.0, 0.5]))
    assert not mu.is_nonnegative
    half = mu.scaled(0.5)
    np.testing.assert_allclose(discretize_measure(unit_mesh, half), 0.5 * discretize_measure(unit_mesh, mu))
