import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from measure_heat import (
    CoefficientField,
    MeasureData,
    NodalField,
    assemble_stiffness,
    build_mesh,
    discretize_measure,
    solve_elliptic,
)
from measure_heat.duality import check_super_sub, duality_residual, elliptic_duality_residual
from measure_heat.errors import GridMismatchError
from measure_heat.solvers import TimeGrid, solve_parabolic, solve_retrograde
from measure_heat.verify import random_coefficient, random_measure, random_mesh


def run_pair(mesh, M, mu, u0, g, tg):
    u = solve_parabolic(mesh, M, mu, u0, tg)
    w = solve_retrograde(mesh, M, g, tg)
    return u, w


def test_zero_source(unit_mesh, unit_coef, center_dirac, rng):
    tg = TimeGrid(0.1, 10)
    u0 = rng.normal(size=3)
    u, w = run_pair(unit_mesh, unit_coef, center_dirac, u0, np.zeros((10, 3)), tg)
    r = duality_residual(u, w, u0, np.zeros((10, 3)), center_dirac, unit_mesh)
    assert (r.lhs_init_term, r.lhs_bulk_term, r.rhs_measure_term, r.residual) == (0, 0, 0, 0)


def test_zero_forward_data(unit_mesh, unit_coef, rng):
    tg = TimeGrid(0.1, 10)
    g = rng.normal(size=(10, 3))
    u, w = run_pair(unit_mesh, unit_coef, MeasureData(), np.zeros(3), g, tg)
    r = duality_residual(u, w, np.zeros(3), g, MeasureData(), unit_mesh)
    assert r.lhs_init_term == 0 and r.lhs_bulk_term == 0 and r.rhs_measure_term == 0
    assert r.relative_residual == 0


def brute_force_sides(mesh, M, mu, u0, g, dt):
    """Both sides of the pairing from explicit dense step matrices.

    Forward: u^n = S u^{n-1} + c with S = P^{-1} D/dt, c = P^{-1} b.
    The backward recursion transposes this affine map step by step.
    """
    Dm = np.diag(mesh.quad_weights)
    P = Dm / dt + Dm @ assemble_stiffness(mesh, M).toarray()
    Pinv = np.linalg.inv(P)
    S = Pinv @ Dm / dt
    b = discretize_measure(mesh, mu)
    N = g.shape[0]
    us = [u0]
    for _ in range(N):
        us.append(S @ us[-1] + Pinv @ b)
    # pairing functional L(u) = sum_n dt <u^n, g^n>_D; its adjoint states
    # y^{N} = 0, y^{n-1} = S^T y^n + dt D g^n give L = <u0, S^T y^0> + sum_n (P^{-1} b) . y^{n-1}
    ys = [np.zeros_like(u0)]
    for n in range(N, 0, -1):
        ys.append(S.T @ ys[-1] + dt * Dm @ g[n - 1])
    ys = ys[::-1]
    bulk = sum(dt * us[n] @ Dm @ g[n - 1] for n in range(1, N + 1))
    via_adjoint = u0 @ (S.T @ ys[0]) + sum((Pinv @ b) @ ys[n - 1] for n in range(1, N + 1))
    return np.array(us), np.array(ys), bulk, via_adjoint


def test_dense_brute_force_example(unit_mesh, unit_coef, center_dirac, rng):
    dt, N = 0.1, 10
    u0 = rng.normal(size=3)
    g = rng.normal(size=(N, 3))
    us, ys, bulk, via_adjoint = brute_force_sides(unit_mesh, unit_coef, center_dirac, u0, g, dt)
    assert bulk == pytest.approx(via_adjoint, rel=1e-12)
    u, w = run_pair(unit_mesh, unit_coef, center_dirac, u0, g, TimeGrid(dt, N))
    np.testing.assert_allclose(u.states, us, rtol=1e-12, atol=1e-14)
    r = duality_residual(u, w, u0, g, center_dirac, unit_mesh)
    assert abs(r.relative_residual) <= 1e-10
    assert r.lhs_bulk_term == pytest.approx(bulk, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([1, 2]))
def test_identity_on_random_cases(seed, dim):
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng, dim, 8)
    M = random_coefficient(rng, mesh, "general")
    mu = random_measure(rng, mesh)
    N = int(rng.integers(1, 12))
    tg = TimeGrid(float(rng.uniform(1e-3, 0.2)), N)
    u0 = rng.normal(size=mesh.n_interior)
    g = rng.normal(size=(N, mesh.n_interior))
    u, w = run_pair(mesh, M, mu, u0, g, tg)
    r = duality_residual(u, w, u0, g, mu, mesh)
    assert r.relative_residual <= 1e-10
    assert r.residual == r.lhs_init_term + r.lhs_bulk_term - r.rhs_measure_term


def test_break_adjoint_is_detected(rng):
    mesh = build_mesh(1, [1.0], [8])
    M = CoefficientField.scalar(1.0)
    mu = MeasureData.dirac(0.5)
    tg = TimeGrid(0.1, 5)
    g = np.abs(rng.normal(size=(5, mesh.n_interior)))
    u, w = run_pair(mesh, M, mu, mesh.zeros(), g, tg)
    r = duality_residual(u, w, mesh.zeros(), g, mu, mesh, break_adjoint=True)
    assert r.relative_residual > 1e-3


def test_residual_linear_in_data(rng):
    mesh = build_mesh(2, [1.0, 1.0], [6, 5])
    M = random_coefficient(rng, mesh, "general")
    tg = TimeGrid(0.05, 6)
    reps = []
    data = []
    for _ in range(2):
        mu = random_measure(rng, mesh)
        u0 = rng.normal(size=mesh.n_interior)
        g = rng.normal(size=(6, mesh.n_interior))
        data.append((mu, u0, g))
    # the pairing is bilinear; with a shared g it is linear in (u0, mu)
    g = data[0][2]
    for mu, u0, _ in data:
        u, w = run_pair(mesh, M, mu, u0, g, tg)
        reps.append(duality_residual(u, w, u0, g, mu, mesh))
    mu_s = data[0][0] + data[1][0]
    u0_s = data[0][1] + data[1][1]
    u, w = run_pair(mesh, M, mu_s, u0_s, g, tg)
    s = duality_residual(u, w, u0_s, g, mu_s, mesh)
    scale = sum(abs(x) for r in reps for x in (r.lhs_init_term, r.lhs_bulk_term, r.rhs_measure_term))
    for field in ("lhs_init_term", "lhs_bulk_term", "rhs_measure_term", "residual"):
        assert getattr(s, field) == pytest.approx(sum(getattr(r, field) for r in reps), abs=1e-12 * scale)


def test_report_json_fields(unit_mesh, unit_coef, center_dirac):
    g = np.ones((3, 3))
    u, w = run_pair(unit_mesh, unit_coef, center_dirac, np.zeros(3), g, TimeGrid(0.1, 3))
    r = duality_residual(u, w, np.zeros(3), g, center_dirac, unit_mesh)
    d = json.loads(r.to_json())
    assert list(d) == ["lhs_init_term", "lhs_bulk_term", "rhs_measure_term", "residual", "relative_residual"]


def test_thinned_trajectory_rejected(unit_mesh, unit_coef, center_dirac):
    tg = TimeGrid(0.1, 4)
    u = solve_parabolic(unit_mesh, unit_coef, center_dirac, np.zeros(3), tg, stride=2)
    w = solve_retrograde(unit_mesh, unit_coef, np.ones(3), tg)
    with pytest.raises(GridMismatchError):
        duality_residual(u, w, np.zeros(3), np.ones(3), center_dirac, unit_mesh)


def test_elliptic_duality_example(unit_mesh, unit_coef, center_dirac):
    g = np.ones(3)
    v = solve_elliptic(unit_mesh, unit_coef, center_dirac)
    gmu = MeasureData(density=NodalField(unit_mesh, g))
    z = solve_elliptic(unit_mesh, unit_coef.transpose(), gmu)
    assert abs(elliptic_duality_residual(v, z, g, center_dirac, unit_mesh)) <= 1e-12
    assert float(unit_mesh.quad_weights @ v.values) == pytest.approx(0.125, rel=1e-14)


def test_elliptic_duality_trivial(unit_mesh, unit_coef, center_dirac):
    v = solve_elliptic(unit_mesh, unit_coef, center_dirac)
    assert elliptic_duality_residual(v, np.zeros(3), np.zeros(3), center_dirac, unit_mesh) == 0
    assert elliptic_duality_residual(np.zeros(3), np.ones(3), np.ones(3), MeasureData(), unit_mesh) == 0


def test_elliptic_duality_general(rng):
    for _ in range(5):
        mesh = random_mesh(rng, 2, 9)
        M = random_coefficient(rng, mesh, "general")
        mu = random_measure(rng, mesh)
        g = rng.normal(size=mesh.n_interior)
        v = solve_elliptic(mesh, M, mu)
        z = solve_elliptic(mesh, M.transpose(), MeasureData(density=NodalField(mesh, g)))
        assert elliptic_duality_residual(v, z, g, mu, mesh, relative=True) <= 1e-10


def test_ordering_examples():
    mesh = build_mesh(1, [1.0], [16])
    M = CoefficientField.scalar(1.0)
    mu = MeasureData.dirac(0.5)
    tg = TimeGrid(0.01, 30)
    a = solve_parabolic(mesh, M, mu, mesh.zeros(), tg)
    b = solve_parabolic(mesh, M, mu, mesh.sample(lambda x: x * (1 - x)), tg)
    assert check_super_sub(a, a).relation == "=="
    v = check_super_sub(a, b)
    assert v.le and not v.ge
    assert v.relation == "<="
    assert v.first_ge_violation is not None
    assert check_super_sub(b, a).relation == ">="


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ordering_partial_order(seed):
    rng = np.random.default_rng(seed)
    mesh = random_mesh(rng, 1, 8)
    M = random_coefficient(rng, mesh, "diagonal")
    mu = random_measure(rng, mesh)
    tg = TimeGrid(0.02, 5)
    a = solve_parabolic(mesh, M, mu, rng.normal(size=mesh.n_interior), tg)
    b = solve_parabolic(mesh, M, mu, rng.normal(size=mesh.n_interior), tg)
    assert check_super_sub(a, a).le and check_super_sub(a, a).ge
    ab, ba = check_super_sub(a, b), check_super_sub(b, a)
    assert ab.le == ba.ge and ab.ge == ba.le
    if ab.le and ab.ge:
        np.testing.assert_allclose(a.states, b.states, atol=1e-12)
