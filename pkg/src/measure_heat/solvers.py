"""Elliptic, forward parabolic and retrograde (adjoint) solves.

Time stepping is backward Euler with lumped mass ``D`` and the weak-form
stiffness ``D A``::

    (D/dt + D A) u^n = D u^{n-1}/dt + b_mu,                      n = 1..N
    (D/dt + (D A)^T) w^m = D w^{m+1}/dt + D g^{m+1},   w^N = 0,  m = N-1..0

The retrograde recursion is the exact transpose of the forward one, which
makes the discrete duality pairing an algebraic identity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import ArrayLike, NDArray

from measure_heat.assembly import (
    RESIDUAL_RTOL,
    SparseOperator,
    assemble_mass,
    assemble_stiffness,
    discretize_measure,
    solve_linear,
)
from measure_heat.errors import GridMismatchError, SingularOperatorError
from measure_heat.mesh import Mesh, NodalField
from measure_heat.model import CoefficientField, MeasureData

CHECKPOINT_LIMIT = 1000


def fmt(x: float) -> str:
    """Float formatting used by every CSV/JSON writer (17 significant digits)."""
    return f"{x:.17g}"


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def t_end(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def covering(cls, dt: float, t_end: float) -> "TimeGrid":
        """Grid with step ``dt`` and ``ceil(t_end/dt)`` steps."""
        return cls(dt, max(1, math.ceil(t_end / dt - 1e-9)))

    def times(self) -> NDArray[np.float64]:
        return self.dt * np.arange(self.n_steps + 1)


def checkpoint_steps(n_steps: int, stride: int | None) -> NDArray[np.int64]:
    """Checkpointed step indices, always including 0 and ``n_steps``.

    Without a stride: every step up to 1000 steps, else 1000 evenly spaced
    intervals.
    """
    if stride is None:
        if n_steps <= CHECKPOINT_LIMIT:
            return np.arange(n_steps + 1)
        return np.unique(np.rint(np.linspace(0, n_steps, CHECKPOINT_LIMIT + 1)).astype(np.int64))
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"checkpoint stride must be >= 1, got {stride}")
    steps = np.arange(0, n_steps + 1, stride)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


@dataclass(eq=False)
class Trajectory:
    """Nodal states on a time grid, thinned to checkpoint steps.

    Diagnostics are recorded at every step ``0..n_steps``; ``l1_dist_ref`` is
    NaN when no reference field was supplied.
    """

    mesh: Mesh
    time_grid: TimeGrid
    steps: NDArray[np.int64]
    states: NDArray[np.float64]
    l1: NDArray[np.float64]
    linf: NDArray[np.float64]
    l1_dist_ref: NDArray[np.float64]

    @property
    def times(self) -> NDArray[np.float64]:
        return self.steps * self.time_grid.dt

    @property
    def is_complete(self) -> bool:
        return self.steps.size == self.time_grid.n_steps + 1

    def state(self, step: int) -> NDArray[np.float64]:
        pos = np.searchsorted(self.steps, step)
        if pos >= self.steps.size or self.steps[pos] != step:
            raise KeyError(f"step {step} was not checkpointed")
        return self.states[pos]

    @property
    def initial(self) -> NDArray[np.float64]:
        return self.states[0]

    @property
    def final(self) -> NDArray[np.float64]:
        return self.states[-1]

    def write_csv(self, path: str | Path) -> None:
        """Node table ``step,t,node_index,x[,y],value`` for every checkpoint."""
        coords = self.mesh.coords
        header = ["step", "t", "node_index", "x", "y"][: 4 + self.mesh.dim - 1] + ["value"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for step, state in zip(self.steps, self.states):
                t = fmt(step * self.time_grid.dt)
                for j, value in enumerate(state):
                    writer.writerow([int(step), t, j, *(fmt(c) for c in coords[j]), fmt(value)])

    def write_diagnostics_csv(self, path: str | Path) -> None:
        """Per-step diagnostics ``step,t,l1,linf,l1_dist_ref``."""
        dt = self.time_grid.dt
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "t", "l1", "linf", "l1_dist_ref"])
            for n in range(self.l1.size):
                writer.writerow([n, fmt(n * dt), fmt(self.l1[n]), fmt(self.linf[n]), fmt(self.l1_dist_ref[n])])


class _Recorder:
    def __init__(self, mesh: Mesh, tg: TimeGrid, stride: int | None, reference: NDArray | None):
        self.weights = mesh.quad_weights
        self.steps = checkpoint_steps(tg.n_steps, stride)
        self.keep = set(self.steps.tolist())
        self.states = np.empty((self.steps.size, mesh.n_interior))
        self.l1 = np.empty(tg.n_steps + 1)
        self.linf = np.empty(tg.n_steps + 1)
        self.dist = np.full(tg.n_steps + 1, np.nan)
        self.reference = reference
        self._slot = {s: k for k, s in enumerate(self.steps.tolist())}

    def record(self, n: int, u: NDArray) -> None:
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"non-finite state at step {n}")
        self.l1[n] = float(self.weights @ np.abs(u))
        self.linf[n] = float(np.max(np.abs(u), initial=0.0))
        if self.reference is not None:
            self.dist[n] = float(self.weights @ np.abs(u - self.reference))
        if n in self.keep:
            self.states[self._slot[n]] = u


class StepOperator:
    """Factorised backward-Euler operator ``D/dt + D A`` (or its transpose).

    Shared by every march with the same mesh, coefficient and ``dt``; the
    factorisation is read-only after construction.
    """

    def __init__(self, A: SparseOperator, D: SparseOperator, dt: float, transpose: bool = False):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = float(dt)
        self.mass = D.diagonal
        K = (D * (1.0 / dt)) + (D @ A)
        self.operator = K.T if transpose else K
        try:
            self._lu = spla.splu(sp.csc_matrix(self.operator.matrix))
        except RuntimeError as exc:
            raise SingularOperatorError(f"step operator is singular: {exc}") from exc

    def advance(self, u: NDArray, load: NDArray) -> NDArray:
        """Solve ``K u_new = D u / dt + load``."""
        return self._lu.solve(self.mass * u / self.dt + load)


def _as_values(f, mesh: Mesh) -> NDArray[np.float64]:
    if isinstance(f, NodalField):
        if f.mesh != mesh:
            raise GridMismatchError("field lives on a different mesh")
        return f.values
    arr = np.asarray(f, dtype=float).reshape(-1)
    if arr.shape != (mesh.n_interior,):
        raise GridMismatchError(f"expected {mesh.n_interior} nodal values, got {arr.size}")
    return arr


def solve_elliptic(mesh: Mesh, M: CoefficientField, mu: MeasureData, *, rtol: float = RESIDUAL_RTOL,
                   return_info: bool = False):
    """Steady state ``v``: solves ``D A v = b_mu``."""
    A = assemble_stiffness(mesh, M)
    D = assemble_mass(mesh)
    b = discretize_measure(mesh, mu)
    v, info = solve_linear(D @ A, b, rtol=rtol, return_info=True)
    field_v = NodalField(mesh, v)
    if return_info:
        return field_v, info
    return field_v


def step_parabolic(state, A: SparseOperator, D: SparseOperator, b_mu: ArrayLike, dt: float):
    """One backward-Euler step: solves ``(D/dt + D A) u_new = D u / dt + b_mu``.

    ``A`` is the strong-form stiffness and ``b_mu`` the nodal load vector.
    Returns a NodalField when ``state`` is one, otherwise an array.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.asarray(state, dtype=float)
    K = (D * (1.0 / dt)) + (D @ A)
    rhs = D.diagonal * u / dt + np.asarray(b_mu, dtype=float)
    # warm start from the current state so a fixed point is returned unchanged
    new = solve_linear(K, rhs, x0=u)
    if isinstance(state, NodalField):
        return NodalField(state.mesh, new)
    return new


def solve_parabolic(mesh: Mesh, M: CoefficientField, mu: MeasureData, u0, tg: TimeGrid, *,
                    reference=None, stride: int | None = None, stepper: StepOperator | None = None) -> Trajectory:
    """March the forward problem from ``u0`` over ``tg``.

    Args:
        reference: field for the ``l1_dist_ref`` diagnostic (e.g. the steady state).
        stride: checkpoint stride; defaults to every step up to 1000 steps.
        stepper: pre-factorised step operator to reuse across solves.
    """
    u = _as_values(u0, mesh).copy()
    ref = None if reference is None else _as_values(reference, mesh)
    if stepper is None:
        stepper = StepOperator(assemble_stiffness(mesh, M), assemble_mass(mesh), tg.dt)
    elif stepper.dt != tg.dt:
        raise GridMismatchError("stepper dt differs from the time grid")
    b = discretize_measure(mesh, mu)
    rec = _Recorder(mesh, tg, stride, ref)
    rec.record(0, u)
    for n in range(1, tg.n_steps + 1):
        u = stepper.advance(u, b)
        rec.record(n, u)
    return Trajectory(mesh, tg, rec.steps, rec.states, rec.l1, rec.linf, rec.dist)


def _source_schedule(g, mesh: Mesh, n_steps: int) -> NDArray[np.float64]:
    if isinstance(g, NodalField):
        g = g.values
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 1:
        arr = np.broadcast_to(_as_values(arr, mesh), (n_steps, mesh.n_interior))
    if arr.shape != (n_steps, mesh.n_interior):
        raise GridMismatchError(f"source schedule must have shape ({n_steps}, {mesh.n_interior}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("source values must be finite")
    return arr


def solve_retrograde(mesh: Mesh, M: CoefficientField, g, tg: TimeGrid, *, stride: int | None = None,
                     stepper: StepOperator | None = None) -> Trajectory:
    """March the adjoint problem backward from ``w(T) = 0``.

    ``g`` is a source density, piecewise constant in time: row ``n-1`` of an
    ``(n_steps, n_interior)`` array holds its value on step ``n`` (the interval
    ending at ``t_n``). A single field means a time-constant source.

    The returned trajectory is indexed in forward time, ``states[-1]`` being
    the zero terminal state.
    """
    gs = _source_schedule(g, mesh, tg.n_steps)
    if stepper is None:
        stepper = StepOperator(assemble_stiffness(mesh, M), assemble_mass(mesh), tg.dt, transpose=True)
    elif stepper.dt != tg.dt:
        raise GridMismatchError("stepper dt differs from the time grid")
    weights = mesh.quad_weights
    rec = _Recorder(mesh, tg, stride, None)
    w = np.zeros(mesh.n_interior)
    rec.record(tg.n_steps, w)
    for m in range(tg.n_steps - 1, -1, -1):
        w = stepper.advance(w, weights * gs[m])
        rec.record(m, w)
    return Trajectory(mesh, tg, rec.steps, rec.states, rec.l1, rec.linf, rec.dist)


def green_1d(x: ArrayLike, y: float) -> NDArray[np.float64]:
    """Green's function of ``-u''`` on (0, 1) with Dirichlet ends."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= y, x * (1.0 - y), y * (1.0 - x))


TAIL_TOL = 1e-8


def spectral_oracle_1d(x0: float, t: float, x: ArrayLike, n_terms: int | None = None):
    """Sine-series solution of ``u_t - u_xx = delta_{x0}``, ``u(0) = 0`` on (0, 1).

    ``u(t, x) = sum_n 2 sin(n pi x0) sin(n pi x) (1 - exp(-(n pi)^2 t)) / (n pi)^2``.

    With ``n_terms`` the series is truncated there. Otherwise the time-independent
    part is summed in closed form (it is the Green's function) and the decaying
    part is truncated once its tail bound falls below 1e-8.
    """
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return np.zeros_like(x)
    if n_terms is not None:
        out = np.zeros_like(x)
        chunk = 20_000
        for start in range(1, n_terms + 1, chunk):
            n = np.arange(start, min(n_terms, start + chunk - 1) + 1, dtype=float)[:, None]
            k = n * np.pi
            out = out + np.sum(2.0 * np.sin(k * x0) * np.sin(k * x) * -np.expm1(-k * k * t) / (k * k), axis=0)
        return out
    # geometric bound on the tail sum_{n>N} 2 exp(-(n pi)^2 t) / (n pi)^2
    n_max = 1
    while 2.0 * math.exp(-((n_max * math.pi) ** 2) * t) / (math.pi ** 2 * n_max * (1.0 - math.exp(-math.pi ** 2 * t * (2 * n_max + 1)))) >= TAIL_TOL:
        n_max += 1
    n = np.arange(1, n_max + 1, dtype=float)[:, None]
    k = n * np.pi
    transient = np.sum(2.0 * np.sin(k * x0) * np.sin(k * x) * np.exp(-k * k * t) / (k * k), axis=0)
    return green_1d(x, x0) - transient
