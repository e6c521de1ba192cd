"""Long-time behaviour: convergence of ``u(t)`` to the steady state ``v``.

All runs march the backward-Euler scheme and record ``||u^n - v||_1`` at each
step. Since ``z = u - v`` solves the source-free scheme, its decay is
governed by the smallest eigenvalue of the stiffness operator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from measure_heat.assembly import SparseOperator, assemble_mass, assemble_stiffness, discretize_measure
from measure_heat.duality import compare_states
from measure_heat.errors import NonConvergenceError
from measure_heat.mesh import Mesh
from measure_heat.model import CoefficientField, MeasureData
from measure_heat.solvers import StepOperator, _as_values, fmt, solve_elliptic

DEFAULT_TOL = 1e-8
EIGEN_TOL = 1e-10
MAX_SWEEPS = 10_000
ORDER_SLACK = 1e-13
E_FOLDINGS = 50.0


def smallest_eigenvalue(mesh: Mesh, M: CoefficientField, tol: float = EIGEN_TOL,
                        maxiter: int = MAX_SWEEPS) -> float:
    """Smallest eigenvalue of ``D A x = lambda D x`` by inverse iteration.

    Iterates until successive Rayleigh quotients agree to ``tol`` (relative).
    Requires a symmetric operator.
    """
    A = assemble_stiffness(mesh, M)
    if not A.symmetric:
        raise ValueError("smallest_eigenvalue needs a symmetric coefficient field")
    return _inverse_iteration(A, assemble_mass(mesh), tol, maxiter)


def _inverse_iteration(A: SparseOperator, D: SparseOperator, tol: float, maxiter: int) -> float:
    K = (D @ A).matrix
    mass = D.diagonal
    lu = spla.splu(sp.csc_matrix(K))
    x = np.ones(A.n)
    x /= math.sqrt(x @ (mass * x))
    lam = float(x @ (K @ x))
    for sweep in range(1, maxiter + 1):
        y = lu.solve(mass * x)
        y /= math.sqrt(y @ (mass * y))
        lam_new = float(y @ (K @ y))
        x = y
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise NonConvergenceError("inverse power iteration did not converge", abs(lam_new - lam), maxiter)


def smallest_rate(mesh: Mesh, M: CoefficientField, dt: float) -> float:
    """Per-unit-time decay rate ``log(1 + lambda_1 dt) / dt`` of the scheme."""
    lam = smallest_eigenvalue(mesh, M)
    return math.log1p(lam * dt) / dt


def _rate_or_nan(mesh: Mesh, M: CoefficientField, dt: float) -> float:
    if M.is_symmetric:
        return smallest_rate(mesh, M, dt)
    return float("nan")


def _horizon_rate(mesh: Mesh, M: CoefficientField, dt: float) -> float:
    # the symmetric part bounds the decay of the nonsymmetric operator from below
    sym = CoefficientField(M.dim, M.kind, 0.5 * (M.entries + np.swapaxes(M.entries, -1, -2)))
    return smallest_rate(mesh, sym, dt)


@dataclass(eq=False)
class DecayCurve:
    """Distance to the steady state along a march.

    ``fitted_rate`` is the least-squares slope of ``-log(l1_dist)`` over the
    last decade of decay; NaN when fewer than two usable points exist.
    """

    times: NDArray[np.float64]
    l1_dist: NDArray[np.float64]
    linf_dist: NDArray[np.float64]
    fitted_rate: float
    predicted_rate: float
    stop_reason: str
    tol_abs: float
    final_state: NDArray[np.float64] = field(repr=False)

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def reached(self) -> bool:
        return self.stop_reason == "tolerance_reached"

    def summary(self) -> dict:
        return {
            "fitted_rate": self.fitted_rate,
            "predicted_rate": self.predicted_rate,
            "stop_reason": self.stop_reason,
            "t_final": self.t_final,
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "l1_dist", "linf_dist"])
            for row in zip(self.times, self.l1_dist, self.linf_dist):
                writer.writerow([fmt(x) for x in row])


def fit_decay_rate(times: NDArray, l1_dist: NDArray, tol_abs: float) -> float:
    """Slope of ``-log(l1_dist)`` over the trailing points within a decade of the end level."""
    level = 10.0 * max(tol_abs, float(l1_dist[-1]))
    inside = (l1_dist <= level) & (l1_dist > 0)
    start = len(inside)
    while start > 0 and inside[start - 1]:
        start -= 1
    t = times[start:]
    if t.size < 2:
        return float("nan")
    slope = np.polyfit(t, np.log(l1_dist[start:]), 1)[0]
    return float(-slope)


class _DistanceLog:
    def __init__(self, v: NDArray, weights: NDArray):
        self.v = v
        self.weights = weights
        self.times: list[float] = []
        self.l1: list[float] = []
        self.linf: list[float] = []

    def record(self, t: float, u: NDArray) -> float:
        diff = np.abs(u - self.v)
        d1 = float(self.weights @ diff)
        self.times.append(t)
        self.l1.append(d1)
        self.linf.append(float(np.max(diff, initial=0.0)))
        return d1

    def curve(self, predicted: float, reason: str, tol_abs: float, final: NDArray) -> DecayCurve:
        times = np.asarray(self.times)
        l1 = np.asarray(self.l1)
        return DecayCurve(times, l1, np.asarray(self.linf), fit_decay_rate(times, l1, tol_abs),
                          predicted, reason, tol_abs, final.copy())


def _setup(mesh, M, mu, dt, tol, t_max):
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    v = solve_elliptic(mesh, M, mu).values
    predicted = _rate_or_nan(mesh, M, dt)
    if t_max is None:
        rate = predicted if math.isfinite(predicted) else _horizon_rate(mesh, M, dt)
        t_max = E_FOLDINGS / rate
    if not t_max >= dt:
        raise ValueError(f"t_max must be at least dt, got t_max={t_max}, dt={dt}")
    stepper = StepOperator(assemble_stiffness(mesh, M), assemble_mass(mesh), dt)
    b = discretize_measure(mesh, mu)
    tol_abs = tol * max(1.0, float(mesh.quad_weights @ np.abs(v)))
    return v, predicted, t_max, stepper, b, tol_abs


def _past_horizon(n: int, dt: float, t_max: float) -> bool:
    return (n + 1) * dt > t_max * (1.0 + 1e-12)


def run_to_steady(mesh: Mesh, M: CoefficientField, mu: MeasureData, u0, dt: float,
                  tol: float = DEFAULT_TOL, t_max: float | None = None) -> DecayCurve:
    """March from ``u0`` until ``||u - v||_1 <= tol * max(1, ||v||_1)``.

    Stops with ``stop_reason="horizon_reached"`` when another step would pass
    ``t_max`` (default: 50 e-foldings of the predicted rate). At least one step
    is always taken.
    """
    v, predicted, t_max, stepper, b, tol_abs = _setup(mesh, M, mu, dt, tol, t_max)
    u = _as_values(u0, mesh).copy()
    log = _DistanceLog(v, mesh.quad_weights)
    log.record(0.0, u)
    n = 0
    while True:
        n += 1
        u = stepper.advance(u, b)
        if log.record(n * dt, u) <= tol_abs:
            reason = "tolerance_reached"
            break
        if _past_horizon(n, dt, t_max):
            reason = "horizon_reached"
            break
    return log.curve(predicted, reason, tol_abs, u)


@dataclass(eq=False)
class BracketVerdict:
    """Outcome of the lower/upper bracketing run.

    ``first_violation`` is ``(step, node, side)`` with side ``"lower"`` when
    ``u_lower > u`` or ``"upper"`` when ``u > u_upper``. For non-diagonal M a
    violation is reported, not raised.
    """

    bracket_held: bool
    first_violation: tuple[int, int, str] | None
    upper: DecayCurve
    lower: DecayCurve

    @property
    def all_reached(self) -> bool:
        return self.bracket_held and self.upper.reached and self.lower.reached


def bracket_run(mesh: Mesh, M: CoefficientField, mu: MeasureData, u0, dt: float,
                t_max: float | None = None, tol: float = DEFAULT_TOL) -> tuple[DecayCurve, BracketVerdict]:
    """Run from ``u0``, ``max(u0, v)`` and ``min(u0, v)`` in lockstep.

    Checks ``u_lower <= u <= u_upper`` at every step (tolerance 1e-12) and
    marches until all three runs reach the tolerance or the horizon.
    """
    v, predicted, t_max, stepper, b, tol_abs = _setup(mesh, M, mu, dt, tol, t_max)
    u = _as_values(u0, mesh).copy()
    states = [u, np.maximum(u, v), np.minimum(u, v)]
    logs = [_DistanceLog(v, mesh.quad_weights) for _ in states]
    reached_at = [None, None, None]
    violation = None

    def check(n):
        nonlocal violation
        if violation is not None:
            return
        steps = np.array([n])
        low = compare_states(states[2][None], states[0][None], steps)
        if not low.le:
            violation = (*low.first_le_violation, "lower")
            return
        up = compare_states(states[0][None], states[1][None], steps)
        if not up.le:
            violation = (*up.first_le_violation, "upper")

    for log, s in zip(logs, states):
        log.record(0.0, s)
    check(0)
    n = 0
    while True:
        n += 1
        states = [stepper.advance(s, b) for s in states]
        for k, (log, s) in enumerate(zip(logs, states)):
            if log.record(n * dt, s) <= tol_abs and reached_at[k] is None:
                reached_at[k] = n
        check(n)
        if all(r is not None for r in reached_at) or _past_horizon(n, dt, t_max):
            break
    curves = [
        log.curve(predicted, "tolerance_reached" if r is not None else "horizon_reached", tol_abs, s)
        for log, r, s in zip(logs, reached_at, states)
    ]
    return curves[0], BracketVerdict(violation is None, violation, curves[1], curves[2])


@dataclass(frozen=True)
class MonotoneVerdict:
    """Monotone approach to ``v`` from below (``u0 = 0``) and above (``u0 = lam v``).

    ``v_positive`` is None when the measure vanishes.
    """

    from_zero_nondecreasing: bool
    from_zero_below_v: bool
    from_above_nonincreasing: bool
    from_above_above_v: bool
    converged_from_zero: bool
    converged_from_above: bool
    v_positive: bool | None
    details: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        flags = (self.from_zero_nondecreasing, self.from_zero_below_v, self.from_above_nonincreasing,
                 self.from_above_above_v, self.converged_from_zero, self.converged_from_above)
        return all(flags) and self.v_positive is not False


def harnack_positive(v: NDArray) -> bool:
    """Strict positivity ``v > 1e-15 * ||v||_inf`` at every node."""
    vmax = float(np.max(np.abs(v), initial=0.0))
    return bool(vmax > 0 and np.all(v > 1e-15 * vmax))


def monotone_approach_check(mesh: Mesh, M: CoefficientField, mu: MeasureData, dt: float,
                            t_max: float | None = None, tol: float = DEFAULT_TOL, lam: float = 2.0,
                            slack: float = ORDER_SLACK) -> MonotoneVerdict:
    """Check monotone convergence from the sub- and supersolution starts.

    Requires a nonnegative measure and diagonal M, where the scheme is monotone.
    """
    if not mu.is_nonnegative:
        raise ValueError("monotone_approach_check needs a nonnegative measure")
    if not M.is_diagonal:
        raise ValueError("monotone_approach_check needs a diagonal coefficient field")
    v, _, t_max, stepper, b, tol_abs = _setup(mesh, M, mu, dt, tol, t_max)
    details = []
    v_pos = None
    if not mu.is_zero:
        v_pos = harnack_positive(v)
        if not v_pos:
            details.append(f"v not strictly positive: min {v.min():.3e}")

    def march(u0, direction):
        u = u0.copy()
        monotone = True
        bounded = True
        for n in range(1, int(t_max / dt + 1e-9) + 1):
            new = stepper.advance(u, b)
            step = direction * (new - u)
            if monotone and step.min(initial=0.0) < -slack:
                monotone = False
                details.append(f"{'increase' if direction > 0 else 'decrease'} violated at step {n}")
            gap = direction * (v - new)
            if bounded and gap.min(initial=0.0) < -slack:
                bounded = False
                details.append(f"bound by v violated at step {n}")
            u = new
            if float(mesh.quad_weights @ np.abs(u - v)) <= tol_abs:
                return monotone, bounded, True
        return monotone, bounded, False

    up_mono, up_bound, up_conv = march(np.zeros_like(v), +1.0)
    down_mono, down_bound, down_conv = march(lam * v, -1.0)
    return MonotoneVerdict(up_mono, up_bound, down_mono, down_bound, up_conv, down_conv, v_pos, tuple(details))
