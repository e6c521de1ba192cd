"""Randomised property suite behind ``measure-heat verify``.

Each property runs a batch of random configurations and reports the worst
metric seen against its tolerance. Batches are independent and may run on
separate threads; the table is assembled in a fixed order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from measure_heat.assembly import assemble_mass, assemble_stiffness, discretize_measure
from measure_heat.asymptotics import harnack_positive, monotone_approach_check
from measure_heat.duality import duality_residual, elliptic_duality_residual
from measure_heat.mesh import Mesh, NodalField, build_mesh
from measure_heat.model import Atom, CoefficientField, MeasureData, t_k, theta_k
from measure_heat.solvers import (
    StepOperator,
    TimeGrid,
    solve_elliptic,
    solve_parabolic,
    solve_retrograde,
    step_parabolic,
)

DUALITY_TOL = 1e-10
STATIONARY_STEP_TOL = 1e-12
STATIONARY_MARCH_TOL = 1e-10
ORDER_SLACK = 1e-13
THETA_LEVELS = (0.01, 0.1, 1.0)


@dataclass(frozen=True)
class Case:
    mesh: Mesh
    coefficient: CoefficientField
    measure: MeasureData
    u0: np.ndarray
    g: np.ndarray
    time_grid: TimeGrid


def random_mesh(rng: np.random.Generator, dim: int, max_cells: int) -> Mesh:
    if dim == 1:
        return build_mesh(1, [rng.uniform(0.5, 2.0)], [int(rng.integers(4, 4 * max_cells + 1))])
    return build_mesh(2, list(rng.uniform(0.5, 2.0, 2)), list(rng.integers(3, max_cells + 1, 2)))


def random_coefficient(rng: np.random.Generator, mesh: Mesh, structure: str) -> CoefficientField:
    """Per-cell field; ``structure`` is ``diagonal``, ``symmetric`` or ``general``."""
    d = mesh.dim
    cells = tuple(reversed(mesh.n_cells))
    m = np.zeros(cells + (d, d))
    diag = rng.uniform(0.5, 2.0, cells + (d,))
    for k in range(d):
        m[..., k, k] = diag[..., k]
    if d == 2 and structure != "diagonal":
        bound = 0.4 * np.sqrt(diag[..., 0] * diag[..., 1])
        off = rng.uniform(-1.0, 1.0, cells) * bound
        m[..., 0, 1] = off
        m[..., 1, 0] = off if structure == "symmetric" else off + rng.uniform(-1.0, 1.0, cells) * 0.3 * bound
    return CoefficientField.table(m, d)


def random_measure(rng: np.random.Generator, mesh: Mesh, nonnegative: bool = False,
                   allow_zero: bool = False) -> MeasureData:
    n_atoms = int(rng.integers(0 if allow_zero else 1, 4))
    atoms = []
    for _ in range(n_atoms):
        loc = tuple(rng.uniform(0.05, 0.95) * L for L in mesh.extents)
        weight = rng.uniform(0.1, 2.0) if nonnegative else rng.uniform(-2.0, 2.0)
        atoms.append(Atom(loc, weight))
    density = None
    if rng.random() < 0.6:
        lo = 0.0 if nonnegative else -1.0
        density = NodalField(mesh, rng.uniform(lo, 1.0, mesh.n_interior))
    return MeasureData(tuple(atoms), density)


def random_case(rng: np.random.Generator, *, dim: int | None = None, structure: str | None = None,
                nonnegative: bool = False, max_cells: int = 12, max_steps: int = 200) -> Case:
    dim = int(rng.integers(1, 3)) if dim is None else dim
    if structure is None:
        structure = "diagonal" if dim == 1 else str(rng.choice(["diagonal", "symmetric"]))
    mesh = random_mesh(rng, dim, max_cells)
    M = random_coefficient(rng, mesh, structure)
    mu = random_measure(rng, mesh, nonnegative)
    n_steps = int(rng.integers(1, max_steps + 1))
    tg = TimeGrid(float(rng.uniform(1e-3, 5e-2)), n_steps)
    u0 = rng.uniform(-1.0, 1.0, mesh.n_interior)
    g = rng.normal(size=(n_steps, mesh.n_interior))
    return Case(mesh, M, mu, u0, g, tg)


# ---- properties: each returns (worst metric, tolerance, detail) -------------------------------------------


def prop_truncation(rng: np.random.Generator, n: int, **_) -> tuple[float, float, str]:
    worst = 0.0
    step = 1e-5
    for k in (0.01, 0.1, 1.0, 3.0):
        s = rng.uniform(-5 * k, 5 * k, 200)
        # stay away from the kinks at |s| = k where the central difference is not second order
        s = s[np.abs(np.abs(s) - k) > 10 * step]
        fd = (theta_k(k, s + step) - theta_k(k, s - step)) / (2 * step)
        worst = max(worst, float(np.max(np.abs(fd - t_k(k, s)))))
        worst = max(worst, float(np.max(np.abs(theta_k(k, s) - theta_k(k, -s)))))
        if np.any(theta_k(k, s) < 0) or theta_k(k, 0.0) != 0:
            return float("inf"), 1e-8, "theta_k negative or nonzero at 0"
        a, b, lam = rng.uniform(-5 * k, 5 * k, 2).tolist() + [float(rng.uniform())]
        if theta_k(k, lam * a + (1 - lam) * b) > lam * theta_k(k, a) + (1 - lam) * theta_k(k, b) + 1e-15:
            return float("inf"), 1e-8, "theta_k not convex"
    s0 = rng.uniform(0.1, 3.0) * rng.choice([-1.0, 1.0])
    kk = 1e-6
    ratio_err = abs(theta_k(kk, s0) / kk - abs(s0))
    if ratio_err > 1e-6:
        return float("inf"), 1e-8, f"theta_k/k limit off by {ratio_err:.2e}"
    return worst, 1e-8, "finite-difference derivative vs t_k"


def prop_adjoint_consistency(rng, n, **kw) -> tuple[float, float, str]:
    bad = 0
    for _ in range(n):
        mesh = random_mesh(rng, 2, kw.get("max_cells", 12))
        M = random_coefficient(rng, mesh, "general")
        A = assemble_stiffness(mesh, M)
        if not assemble_stiffness(mesh, M.transpose()) == A.T:
            bad += 1
    return float(bad), 0.0, "entries differing between A(M^T) and A(M)^T"


def prop_positivity(rng, n, **kw) -> tuple[float, float, str]:
    worst = -np.inf
    for _ in range(n):
        mesh = random_mesh(rng, int(rng.integers(1, 3)), kw.get("max_cells", 12))
        M = random_coefficient(rng, mesh, "diagonal")
        mu = random_measure(rng, mesh, nonnegative=True)
        v = solve_elliptic(mesh, M, mu).values
        # metric: 0 when strictly positive, else the most negative scaled value
        ok = harnack_positive(v)
        worst = max(worst, 0.0 if ok else 1.0)
    return float(worst), 0.0, "cases with v <= 1e-15 ||v||_inf somewhere"


def prop_stationarity(rng, n, march_steps: int = 1000, **kw) -> tuple[float, float, str]:
    worst_step = 0.0
    worst_march = 0.0
    for _ in range(n):
        c = random_case(rng, max_cells=kw.get("max_cells", 12))
        v = solve_elliptic(c.mesh, c.coefficient, c.measure).values
        A = assemble_stiffness(c.mesh, c.coefficient)
        D = assemble_mass(c.mesh)
        b = discretize_measure(c.mesh, c.measure)
        vmax = max(float(np.max(np.abs(v))), np.finfo(float).tiny)
        one = step_parabolic(v, A, D, b, c.time_grid.dt)
        worst_step = max(worst_step, float(np.max(np.abs(one - v))) / vmax)
        traj = solve_parabolic(c.mesh, c.coefficient, c.measure, v, TimeGrid(c.time_grid.dt, march_steps))
        worst_march = max(worst_march, float(np.max(np.abs(traj.states - v))))
    ratio = max(worst_step / STATIONARY_STEP_TOL, worst_march / STATIONARY_MARCH_TOL)
    return ratio, 1.0, f"step rel {worst_step:.3e}, march abs {worst_march:.3e} (metric = worst/tol)"


def prop_comparison(rng, n, **kw) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(n):
        c = random_case(rng, structure="diagonal", max_cells=kw.get("max_cells", 12))
        lo = c.u0
        hi = lo + rng.uniform(0.0, 1.0, lo.size)
        stepper = StepOperator(assemble_stiffness(c.mesh, c.coefficient), assemble_mass(c.mesh), c.time_grid.dt)
        u1 = solve_parabolic(c.mesh, c.coefficient, c.measure, lo, c.time_grid, stepper=stepper)
        u2 = solve_parabolic(c.mesh, c.coefficient, c.measure, hi, c.time_grid, stepper=stepper)
        worst = max(worst, float(np.max(u1.states - u2.states)))
    return max(worst, 0.0), ORDER_SLACK, "max(u_low - u_high) over all steps"


def prop_monotone(rng, n, **kw) -> tuple[float, float, str]:
    failures = 0
    for _ in range(n):
        mesh = random_mesh(rng, int(rng.integers(1, 3)), kw.get("max_cells", 12))
        M = random_coefficient(rng, mesh, "diagonal")
        mu = random_measure(rng, mesh, nonnegative=True)
        verdict = monotone_approach_check(mesh, M, mu, float(rng.uniform(5e-3, 5e-2)))
        failures += not verdict.ok
    return float(failures), 0.0, "failing monotone-approach runs"


def contraction_metrics(c: Case, u0_b: np.ndarray) -> tuple[float, float, float]:
    """Worst increase of ||u1-u2||_1, excess over ||u0_1-u0_2||_1, and worst Theta_k increase."""
    stepper = StepOperator(assemble_stiffness(c.mesh, c.coefficient), assemble_mass(c.mesh), c.time_grid.dt)
    u1 = solve_parabolic(c.mesh, c.coefficient, c.measure, c.u0, c.time_grid, stepper=stepper)
    u2 = solve_parabolic(c.mesh, c.coefficient, c.measure, u0_b, c.time_grid, stepper=stepper)
    w = c.mesh.quad_weights
    diff = u1.states - u2.states
    l1 = np.abs(diff) @ w
    inc = float(np.max(np.diff(l1), initial=0.0))
    excess = float(np.max(l1 - l1[0]))
    theta_inc = 0.0
    for k in THETA_LEVELS:
        ent = theta_k(k, diff) @ w
        theta_inc = max(theta_inc, float(np.max(np.diff(ent), initial=0.0)))
    return inc, excess, theta_inc


def prop_contraction(rng, n, **kw) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(n):
        c = random_case(rng, structure="diagonal", max_cells=kw.get("max_cells", 12))
        other = rng.uniform(-1.0, 1.0, c.u0.size) * rng.uniform(0.1, 3.0)
        worst = max(worst, *contraction_metrics(c, other))
    return worst, ORDER_SLACK, "worst increase of L1 / Theta_k distance"


def prop_duality(rng, n, break_adjoint: bool = False, **kw) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(n):
        c = random_case(rng, max_cells=kw.get("max_cells", 12), max_steps=kw.get("max_steps", 200))
        u = solve_parabolic(c.mesh, c.coefficient, c.measure, c.u0, c.time_grid, stride=1)
        w = solve_retrograde(c.mesh, c.coefficient, c.g, c.time_grid, stride=1)
        rep = duality_residual(u, w, c.u0, c.g, c.measure, c.mesh, break_adjoint=break_adjoint)
        worst = max(worst, rep.relative_residual)
    return worst, DUALITY_TOL, "relative residual of the parabolic pairing"


def prop_elliptic_duality(rng, n, **kw) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(n):
        dim = int(rng.integers(1, 3))
        structure = "diagonal" if dim == 1 else str(rng.choice(["diagonal", "symmetric", "general"]))
        mesh = random_mesh(rng, dim, kw.get("max_cells", 12))
        M = random_coefficient(rng, mesh, structure)
        mu = random_measure(rng, mesh)
        g = rng.normal(size=mesh.n_interior)
        v = solve_elliptic(mesh, M, mu)
        z = solve_elliptic(mesh, M.transpose(), MeasureData(density=NodalField(mesh, g)))
        worst = max(worst, elliptic_duality_residual(v, z, g, mu, mesh, relative=True))
    return worst, DUALITY_TOL, "relative residual of the elliptic pairing"


PROPERTIES: dict[str, Callable] = {
    "truncation": prop_truncation,
    "adjoint_consistency": prop_adjoint_consistency,
    "positivity": prop_positivity,
    "stationarity": prop_stationarity,
    "comparison": prop_comparison,
    "monotone_approach": prop_monotone,
    "contraction": prop_contraction,
    "duality": prop_duality,
    "elliptic_duality": prop_elliptic_duality,
}

TIERS = {
    "quick": {
        "cases": {"truncation": 1, "adjoint_consistency": 5, "positivity": 5, "stationarity": 4, "comparison": 5,
                  "monotone_approach": 4, "contraction": 10, "duality": 10, "elliptic_duality": 10},
        "options": {"max_cells": 8, "max_steps": 100, "march_steps": 200},
    },
    "full": {
        "cases": {"truncation": 5, "adjoint_consistency": 20, "positivity": 20, "stationarity": 20, "comparison": 20,
                  "monotone_approach": 10, "contraction": 50, "duality": 100, "elliptic_duality": 50},
        "options": {"max_cells": 16, "max_steps": 200, "march_steps": 1000},
    },
}


@dataclass(frozen=True)
class PropertyResult:
    name: str
    cases: int
    metric: float
    tolerance: float
    detail: str

    @property
    def passed(self) -> bool:
        return bool(self.metric <= self.tolerance)


def thread_count() -> int:
    env = os.environ.get("MEASURE_HEAT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_suite(seed: int = 0, tier: str = "quick", break_adjoint: bool = False,
              threads: int | None = None) -> list[PropertyResult]:
    """Run every property; results come back in the fixed ``PROPERTIES`` order."""
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}; expected one of {sorted(TIERS)}")
    plan = TIERS[tier]
    names = list(PROPERTIES)

    def run_one(index: int) -> PropertyResult:
        name = names[index]
        rng = np.random.default_rng([seed, index])
        n = plan["cases"][name]
        kwargs = dict(plan["options"])
        if name == "duality":
            kwargs["break_adjoint"] = break_adjoint
        metric, tol, detail = PROPERTIES[name](rng, n, **kwargs)
        return PropertyResult(name, n, float(metric), float(tol), detail)

    with ThreadPoolExecutor(max_workers=threads or thread_count()) as pool:
        return list(pool.map(run_one, range(len(names))))


def format_table(results: list[PropertyResult]) -> str:
    lines = [f"{'property':<22}{'cases':>6}  {'metric':>24}  {'tolerance':>10}  verdict"]
    for r in results:
        lines.append(f"{r.name:<22}{r.cases:>6}  {r.metric:>24.17g}  {r.tolerance:>10.3g}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
