"""Discrete operators, load vectors and the sparse linear solver.

The stiffness operator is the flux-form finite-difference image of
``-div(M grad u)`` with homogeneous Dirichlet rows eliminated. Its entries are
in strong (pointwise) scaling, e.g. ``m / h**2 * [-1, 2, -1]`` in 1D. Load
vectors are nodal functionals, so the linear systems pair them with the
weak-form operator ``D @ A`` where ``D`` is the lumped mass.
"""

from __future__ import annotations

import logging
import math
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray

from measure_heat.errors import GridMismatchError, NonConvergenceError, SingularOperatorError
from measure_heat.mesh import Mesh
from measure_heat.model import CoefficientField, MeasureData

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 10_000
RESIDUAL_RTOL = 1e-12
# after the residual bound is met, keep iterating toward a tighter target for
# at most as many iterations again; the best iterate is returned
POLISH_FACTOR = 1e-2
POLISH_MIN_ITERATIONS = 10


class SparseOperator:
    """Square sparse operator on the interior unknowns (CSR storage)."""

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        self.matrix = m

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def symmetric(self) -> bool:
        diff = self.matrix - self.matrix.T
        return diff.count_nonzero() == 0

    @property
    def T(self) -> "SparseOperator":
        return SparseOperator(self.matrix.T.tocsr())

    @property
    def diagonal(self) -> NDArray[np.float64]:
        return self.matrix.diagonal()

    def toarray(self) -> NDArray[np.float64]:
        return self.matrix.toarray()

    def norm_inf(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.abs(self.matrix).sum(axis=1).max())

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix)
        return self.matrix @ np.asarray(other, dtype=float)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.matrix + other.matrix)

    def __mul__(self, scalar: float) -> "SparseOperator":
        return SparseOperator(self.matrix * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseOperator) or other.shape != self.shape:
            return NotImplemented
        return (self.matrix != other.matrix).count_nonzero() == 0

    __hash__ = None

    def __repr__(self) -> str:
        return f"SparseOperator(n={self.n}, nnz={self.matrix.nnz}, symmetric={self.symmetric})"

    def write_matrix_market(self, path: str | Path) -> None:
        """Debug dump in Matrix Market coordinate format (general storage)."""
        scipy.io.mmwrite(str(path), sp.coo_matrix(self.matrix), symmetry="general", precision=17)


def _harmonic(a: NDArray, b: NDArray) -> NDArray:
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = 2.0 * a * b / (a + b)
    return np.where(a == b, a, hm)


def _assemble_1d(mesh: Mesh, m: NDArray) -> sp.csr_matrix:
    (n,) = mesh.n_cells
    (h,) = mesh.h
    c = m[:, 0, 0] / (h * h)  # cell i joins nodes i and i+1
    left = c[:-1]   # cell left of interior node k = 1..n-1
    right = c[1:]
    main = left + right
    return sp.diags([-left[1:], main, -right[:-1]], [-1, 0, 1], shape=(n - 1, n - 1), format="csr")


def _node_average(cell_values: NDArray) -> NDArray:
    """Average of the cells touching each node; shape ``(ny+1, nx+1)``."""
    ny, nx = cell_values.shape
    total = np.zeros((ny + 1, nx + 1))
    count = np.zeros((ny + 1, nx + 1))
    for dj in (0, 1):
        for di in (0, 1):
            total[dj:dj + ny, di:di + nx] += cell_values
            count[dj:dj + ny, di:di + nx] += 1.0
    return total / count


def _assemble_2d(mesh: Mesh, m: NDArray) -> sp.csr_matrix:
    nx, ny = mesh.n_cells
    hx, hy = mesh.h
    m11, m12, m21, m22 = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]

    # face coefficients: x-face (i,j)-(i+1,j) for j = 1..ny-1 is shared by cells [j-1, i] and [j, i]
    ax = _harmonic(m11[:-1, :], m11[1:, :]) / (hx * hx)   # shape (ny-1, nx), index [j-1, i]
    ay = _harmonic(m22[:, :-1], m22[:, 1:]) / (hy * hy)   # shape (ny, nx-1), index [j, i-1]
    n12 = _node_average(m12) / (4.0 * hx * hy)            # node values, index [j, i]
    n21 = _node_average(m21) / (4.0 * hx * hy)

    mx, my = nx - 1, ny - 1
    idx = np.full((ny + 1, nx + 1), -1, dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange(mx * my).reshape(my, mx)
    J, I = np.meshgrid(np.arange(1, ny), np.arange(1, nx), indexing="ij")
    J = J.ravel()
    I = I.ravel()
    p = idx[J, I]

    rows, cols, vals = [], [], []

    def couple(di, dj, value):
        q = idx[J + dj, I + di]
        keep = q >= 0
        rows.append(p[keep])
        cols.append(q[keep])
        vals.append(value[keep])

    west = ax[J - 1, I - 1]
    east = ax[J - 1, I]
    south = ay[J - 1, I - 1]
    north = ay[J, I - 1]
    rows.append(p)
    cols.append(p)
    vals.append(west + east + south + north)
    couple(-1, 0, -west)
    couple(1, 0, -east)
    couple(0, -1, -south)
    couple(0, 1, -north)
    # centred mixed terms -d_x(m12 d_y u) - d_y(m21 d_x u)
    couple(1, 1, -(n12[J, I + 1] + n21[J + 1, I]))
    couple(-1, -1, -(n12[J, I - 1] + n21[J - 1, I]))
    couple(1, -1, n12[J, I + 1] + n21[J - 1, I])
    couple(-1, 1, n12[J, I - 1] + n21[J + 1, I])

    n = mx * my
    coo = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    out = coo.tocsr()
    out.eliminate_zeros()
    return out


def assemble_stiffness(mesh: Mesh, M: CoefficientField) -> SparseOperator:
    """Flux-form stencil of ``-div(M grad u)`` on the interior nodes.

    Three-point in 1D, nine-point in 2D (five-point when M is diagonal).
    Diagonal entries of M are harmonically averaged onto faces; off-diagonal
    entries enter through centred differences with nodal arithmetic averages.
    The discrete maximum principle is only guaranteed for diagonal M.

    Transposing M transposes the operator exactly, entry for entry.
    """
    m = M.cell_matrices(mesh)
    if mesh.dim == 1:
        return SparseOperator(_assemble_1d(mesh, m))
    return SparseOperator(_assemble_2d(mesh, m))


def assemble_mass(mesh: Mesh) -> SparseOperator:
    """Lumped mass: diagonal of quadrature weights."""
    return SparseOperator(sp.diags(mesh.quad_weights, format="csr"))


def weak_form(A: SparseOperator, D: SparseOperator) -> SparseOperator:
    """The operator ``D @ A`` that pairs with nodal load functionals."""
    return D @ A


def _hat_weights(mesh: Mesh, location) -> list[tuple[int, float]]:
    """Interior unknowns and hat-function values at ``location``."""
    per_axis = []
    for d in range(mesh.dim):
        h = mesh.h[d]
        n = mesh.n_cells[d]
        s = location[d] / h
        i = min(int(np.floor(s)), n - 1)
        frac = s - i
        # node index along the axis and hat value; interior nodes are 1..n-1
        per_axis.append([(i, 1.0 - frac), (i + 1, frac)])
    out = []
    if mesh.dim == 1:
        for i, wi in per_axis[0]:
            if 1 <= i <= mesh.n_cells[0] - 1 and wi != 0.0:
                out.append((i - 1, wi))
        return out
    mx = mesh.n_cells[0] - 1
    for j, wj in per_axis[1]:
        for i, wi in per_axis[0]:
            w = wi * wj
            if 1 <= i <= mesh.n_cells[0] - 1 and 1 <= j <= mesh.n_cells[1] - 1 and w != 0.0:
                out.append(((j - 1) * mx + (i - 1), w))
    return out


def discretize_measure(mesh: Mesh, mu: MeasureData) -> NDArray[np.float64]:
    """Load vector of nodal functionals ``b_j = <mu, hat_j>``.

    Atoms contribute ``weight * hat_j(x)`` (multilinear hats); the density
    contributes ``quad_weight_j * density_j``. Mass on boundary hats is
    dropped because test functions vanish there.
    """
    mu.validate(mesh)
    b = mesh.quad_weights * mu.density_values(mesh)
    for atom in mu.atoms:
        for j, w in _hat_weights(mesh, atom.location):
            b[j] += atom.weight * w
    return b


def _residual_ok(A: sp.csr_matrix, x: NDArray, b: NDArray, norm_a: float, rtol: float) -> tuple[bool, float]:
    r = float(np.max(np.abs(A @ x - b), initial=0.0))
    bound = rtol * (norm_a * float(np.max(np.abs(x), initial=0.0)) + float(np.max(np.abs(b), initial=0.0)))
    return r <= bound, r


class _Monitor:
    """Residual check shared by the Krylov loops; remembers the best passing iterate."""

    def __init__(self, A: sp.csr_matrix, b: NDArray, norm_a: float, rtol: float):
        self.A, self.b, self.norm_a, self.rtol = A, b, norm_a, rtol
        self.best: NDArray | None = None
        self.best_res = math.inf
        self.met_at: int | None = None
        self.res = math.inf

    def done(self, x: NDArray, it: int) -> bool:
        ok, self.res = _residual_ok(self.A, x, self.b, self.norm_a, self.rtol)
        if not ok:
            return False
        if self.res < self.best_res:
            self.best, self.best_res = x.copy(), self.res
        if self.met_at is None:
            self.met_at = it
        if self.res <= POLISH_FACTOR * self.res_bound(x):
            return True
        return it - self.met_at >= max(POLISH_MIN_ITERATIONS, self.met_at)

    def res_bound(self, x: NDArray) -> float:
        return self.rtol * (self.norm_a * float(np.max(np.abs(x), initial=0.0))
                            + float(np.max(np.abs(self.b), initial=0.0)))

    def result(self, it: int) -> tuple[NDArray, int]:
        return self.best, it


def _banded_solve(A: sp.csr_matrix, b: NDArray) -> NDArray:
    n = A.shape[0]
    dia = A.todia()
    offsets = dia.offsets
    if offsets.size and np.max(np.abs(offsets)) > 1:
        lower = upper = int(np.max(np.abs(offsets)))
    else:
        lower = upper = 1
    ab = np.zeros((lower + upper + 1, n))
    coo = A.tocoo()
    ab[upper + coo.row - coo.col, coo.col] = coo.data
    try:
        return scipy.linalg.solve_banded((lower, upper), ab, b, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularOperatorError(f"banded elimination failed: {exc}") from exc


def _pcg(A: sp.csr_matrix, b: NDArray, x0: NDArray, norm_a: float, rtol: float, maxiter: int) -> tuple[NDArray, int]:
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SingularOperatorError("Jacobi preconditioner needs a positive diagonal")
    inv_diag = 1.0 / diag
    x = x0.copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    mon = _Monitor(A, b, norm_a, rtol)
    for it in range(maxiter + 1):
        if mon.done(x, it):
            return mon.result(it)
        if it == maxiter:
            break
        q = A @ p
        pq = p @ q
        if pq <= 0:
            if mon.best is not None:
                return mon.result(it)
            raise SingularOperatorError("conjugate gradient breakdown: operator is not positive definite")
        step = rz / pq
        x += step * p
        r -= step * q
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if mon.best is not None:
        return mon.result(maxiter)
    raise NonConvergenceError("preconditioned conjugate gradient did not converge", mon.res, maxiter)


def _bicgstab(A: sp.csr_matrix, b: NDArray, x0: NDArray, norm_a: float, rtol: float, maxiter: int) -> tuple[NDArray, int]:
    diag = A.diagonal()
    if np.any(diag == 0):
        raise SingularOperatorError("Jacobi preconditioner needs a nonzero diagonal")
    inv_diag = 1.0 / diag
    x = x0.copy()
    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    mon = _Monitor(A, b, norm_a, rtol)
    for it in range(maxiter + 1):
        if mon.done(x, it):
            return mon.result(it)
        if it == maxiter:
            break
        rho_new = r_hat @ r
        if rho_new == 0.0:
            # restart on breakdown
            r = b - A @ x
            r_hat = r.copy()
            rho_new = r_hat @ r
            p = np.zeros_like(b)
            v = np.zeros_like(b)
            rho = alpha = omega = 1.0
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = inv_diag * p
        v = A @ p_hat
        alpha = rho_new / (r_hat @ v)
        s = r - alpha * v
        s_hat = inv_diag * s
        t = A @ s_hat
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        if omega == 0.0:
            r = b - A @ x
    if mon.best is not None:
        return mon.result(maxiter)
    raise NonConvergenceError("stabilised bi-conjugate gradient did not converge", mon.res, maxiter)


def solve_linear(A: SparseOperator, b: ArrayLike, *, x0: ArrayLike | None = None, rtol: float = RESIDUAL_RTOL,
                 maxiter: int = MAX_ITERATIONS, banded: bool | None = None, return_info: bool = False):
    """Solve ``A x = b``.

    Banded elimination is used for banded (1D) operators, Jacobi-preconditioned
    conjugate gradients for symmetric operators, and Jacobi-preconditioned
    BiCGSTAB otherwise. The result satisfies
    ``||Ax - b||_inf <= rtol * (||A||_inf ||x||_inf + ||b||_inf)``; once that
    holds the iteration continues briefly toward a 100x tighter residual and
    returns the best iterate seen.

    Args:
        x0: initial guess for the iterative paths (default zero).
        banded: force (True) or forbid (False) the direct banded path; by
            default it is used when the bandwidth is at most one.
        return_info: also return a dict with ``method``, ``iterations`` and
            ``residual``.

    Raises:
        SingularOperatorError: singular operator detected.
        NonConvergenceError: iteration cap exceeded.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (A.n,):
        raise GridMismatchError(f"right-hand side has {b.size} entries, operator is {A.n}x{A.n}")
    mat = A.matrix
    x0 = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    norm_a = A.norm_inf()
    if A.n > 0 and norm_a == 0.0:
        raise SingularOperatorError("operator is identically zero")
    if banded is None:
        coo = mat.tocoo()
        banded = coo.nnz == 0 or int(np.max(np.abs(coo.row - coo.col))) <= 1
    if banded:
        x = _banded_solve(mat, b)
        method, iterations = "banded", 0
        if not np.all(np.isfinite(x)):
            raise SingularOperatorError("banded elimination produced non-finite values")
    elif A.symmetric:
        x, iterations = _pcg(mat, b, x0, norm_a, rtol, maxiter)
        method = "pcg-jacobi"
    else:
        x, iterations = _bicgstab(mat, b, x0, norm_a, rtol, maxiter)
        method = "bicgstab-jacobi"
    _, residual = _residual_ok(mat, x, b, norm_a, rtol)
    logger.debug("solve_linear: %s, %d iterations, residual %.3e", method, iterations, residual)
    if return_info:
        return x, {"method": method, "iterations": iterations, "residual": residual}
    return x
