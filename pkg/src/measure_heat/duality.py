"""Duality pairings and ordering checks on computed solutions.

With ``u`` from :func:`solve_parabolic` and ``w`` from :func:`solve_retrograde`
on the same grids, the discrete pairing

    -<u0, w^0>_D + sum_{n=1..N} dt <u^n, g^n>_D = sum_{n=1..N} dt b_mu . w^{n-1}

holds up to rounding, because the retrograde march is the transpose of the
forward affine map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from measure_heat.assembly import discretize_measure
from measure_heat.errors import GridMismatchError
from measure_heat.mesh import Mesh
from measure_heat.model import MeasureData
from measure_heat.solvers import Trajectory, _as_values, _source_schedule, fmt

ORDER_TOL = 1e-12


@dataclass(frozen=True)
class DualityReport:
    lhs_init_term: float
    lhs_bulk_term: float
    rhs_measure_term: float
    residual: float
    relative_residual: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        body = ", ".join(f'"{k}": {fmt(v)}' for k, v in self.to_dict().items())
        return "{" + body + "}"


def _relative(residual: float, *terms: float) -> float:
    scale = sum(abs(t) for t in terms)
    if scale == 0.0:
        return 0.0 if residual == 0.0 else float("inf")
    return abs(residual) / scale


def duality_residual(u: Trajectory, w: Trajectory, u0, g, mu: MeasureData, mesh: Mesh, *,
                     break_adjoint: bool = False) -> DualityReport:
    """Evaluate both sides of the discrete duality pairing.

    Both trajectories must hold every step. ``break_adjoint`` pairs the load
    with ``w^n`` instead of ``w^{n-1}``; it exists only as a negative control.
    """
    if u.mesh != mesh or w.mesh != mesh:
        raise GridMismatchError("trajectories live on a different mesh")
    if u.time_grid != w.time_grid:
        raise GridMismatchError(f"time grids differ: {u.time_grid} vs {w.time_grid}")
    if not (u.is_complete and w.is_complete):
        raise GridMismatchError("duality pairing needs every time step (checkpoint stride 1)")
    tg = u.time_grid
    dt = tg.dt
    weights = mesh.quad_weights
    u0v = _as_values(u0, mesh)
    gs = _source_schedule(g, mesh, tg.n_steps)
    b = discretize_measure(mesh, mu)

    init = -float(np.dot(weights * u0v, w.states[0]))
    bulk = dt * float(np.sum((u.states[1:] * gs) @ weights))
    paired = w.states[1:] if break_adjoint else w.states[:-1]
    rhs = dt * float(np.sum(paired @ b))
    residual = init + bulk - rhs
    return DualityReport(init, bulk, rhs, residual, _relative(residual, init, bulk, rhs))


def elliptic_duality_residual(v, z, g, mu: MeasureData, mesh: Mesh, *, relative: bool = False) -> float:
    """``<v, g>_D - b_mu . z`` for ``v`` solving with ``M`` and ``z`` with ``M*``.

    With ``relative=True`` the residual is divided by ``|<v,g>_D| + |b_mu . z|``.
    """
    vv = _as_values(v, mesh)
    zv = _as_values(z, mesh)
    gv = _as_values(g, mesh)
    lhs = float(np.dot(mesh.quad_weights * vv, gv))
    rhs = float(np.dot(discretize_measure(mesh, mu), zv))
    residual = lhs - rhs
    if relative:
        return _relative(residual, lhs, rhs)
    return residual


@dataclass(frozen=True)
class OrderingVerdict:
    """Componentwise comparison of two trajectories.

    ``first_le_violation`` is the first ``(step, node)`` where the candidate
    exceeds the reference by more than the tolerance, and symmetrically for
    ``first_ge_violation``.
    """

    le: bool
    ge: bool
    first_le_violation: tuple[int, int] | None
    first_ge_violation: tuple[int, int] | None

    @property
    def relation(self) -> str:
        if self.le and self.ge:
            return "=="
        if self.le:
            return "<="
        if self.ge:
            return ">="
        return "incomparable"


def _first_violation(diff: np.ndarray, steps: np.ndarray, tol: float) -> tuple[int, int] | None:
    bad = np.argwhere(diff > tol)
    if bad.size == 0:
        return None
    k, node = bad[0]
    return int(steps[k]), int(node)


def compare_states(candidate: np.ndarray, reference: np.ndarray, steps: np.ndarray,
                   tol: float = ORDER_TOL) -> OrderingVerdict:
    """Ordering verdict for stacked states of shape ``(k, n)``."""
    le_bad = _first_violation(candidate - reference, steps, tol)
    ge_bad = _first_violation(reference - candidate, steps, tol)
    return OrderingVerdict(le_bad is None, ge_bad is None, le_bad, ge_bad)


def check_super_sub(candidate: Trajectory, reference: Trajectory, tol: float = ORDER_TOL) -> OrderingVerdict:
    """Compare two trajectories at every shared checkpoint."""
    if candidate.mesh != reference.mesh or candidate.time_grid != reference.time_grid:
        raise GridMismatchError("trajectories are on different grids")
    if not np.array_equal(candidate.steps, reference.steps):
        raise GridMismatchError("trajectories have different checkpoints")
    return compare_states(candidate.states, reference.states, candidate.steps, tol)
