"""Problem data: coefficient field, measure data and truncations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from measure_heat.errors import BoundaryAtomError, GridMismatchError, NonEllipticError
from measure_heat.mesh import Mesh, NodalField, l1_norm

COEFFICIENT_KINDS = ("constant_scalar", "constant_matrix", "per_cell_table")


def _probe_directions(dim: int) -> NDArray[np.float64]:
    if dim == 1:
        return np.array([[1.0]])
    s = 1.0 / np.sqrt(2.0)
    return np.array([[1.0, 0.0], [0.0, 1.0], [s, s], [s, -s]])


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Diffusion matrix ``M(x)``, constant per cell.

    ``entries`` is normalised to shape ``(d, d)`` for the constant kinds and
    ``(n_x, d, d)`` or ``(n_y, n_x, d, d)`` for ``per_cell_table``, where cell
    ``[j, i]`` spans ``[i h_x, (i+1) h_x] x [j h_y, (j+1) h_y]``. A scalar per
    cell is accepted and expanded to a multiple of the identity.

    ``alpha`` is the declared ellipticity constant; it defaults to the
    computed estimate and must not exceed it.
    """

    dim: int
    kind: str
    entries: NDArray[np.float64]
    alpha: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.kind not in COEFFICIENT_KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}; expected one of {COEFFICIENT_KINDS}")
        d = self.dim
        arr = np.array(self.entries, dtype=float)
        if self.kind == "constant_scalar":
            if arr.size != 1:
                raise ValueError("constant_scalar takes a single value")
            arr = arr.reshape(()) * np.eye(d)
        elif self.kind == "constant_matrix":
            if arr.size == 1:
                arr = arr.reshape(()) * np.eye(d)
            if arr.shape != (d, d):
                raise ValueError(f"constant_matrix needs shape ({d}, {d}), got {arr.shape}")
        else:
            if arr.ndim == d:
                arr = arr[..., None, None] * np.eye(d)
            if arr.ndim != d + 2 or arr.shape[-2:] != (d, d):
                raise ValueError(f"per_cell_table needs a {d}D array of scalars or {d}x{d} matrices, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficient entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

        estimate = check_ellipticity(self)
        if self.alpha is None:
            object.__setattr__(self, "alpha", estimate)
        else:
            alpha = float(self.alpha)
            if not alpha > 0:
                raise NonEllipticError(f"declared alpha must be positive, got {alpha}")
            if alpha > estimate * (1.0 + 1e-12):
                raise NonEllipticError(f"declared alpha={alpha} exceeds the ellipticity estimate {estimate}")
            object.__setattr__(self, "alpha", alpha)

    @classmethod
    def scalar(cls, value: float, dim: int = 1) -> "CoefficientField":
        return cls(dim, "constant_scalar", np.asarray(value, dtype=float))

    @classmethod
    def matrix(cls, value: ArrayLike) -> "CoefficientField":
        arr = np.asarray(value, dtype=float)
        return cls(arr.shape[0], "constant_matrix", arr)

    @classmethod
    def table(cls, values: ArrayLike, dim: int) -> "CoefficientField":
        return cls(dim, "per_cell_table", np.asarray(values, dtype=float))

    @property
    def matrices(self) -> NDArray[np.float64]:
        """All stored cell matrices flattened to shape ``(k, d, d)``."""
        return self.entries.reshape(-1, self.dim, self.dim)

    @property
    def is_diagonal(self) -> bool:
        m = self.matrices
        off = m * (1.0 - np.eye(self.dim))
        return bool(np.all(off == 0.0))

    @property
    def is_symmetric(self) -> bool:
        m = self.matrices
        return bool(np.array_equal(m, np.swapaxes(m, -1, -2)))

    def transpose(self) -> "CoefficientField":
        """The field of transposed matrices ``M*``."""
        return CoefficientField(self.dim, self.kind, np.swapaxes(self.entries, -1, -2), self.alpha)

    def scaled(self, factor: float) -> "CoefficientField":
        return CoefficientField(self.dim, "per_cell_table" if self.kind == "per_cell_table" else "constant_matrix",
                                factor * self.entries)

    def cell_matrices(self, mesh: Mesh) -> NDArray[np.float64]:
        """Per-cell matrices broadcast to the mesh, shape ``cells + (d, d)``.

        Cells are indexed ``[i]`` in 1D and ``[j, i]`` in 2D.
        """
        if mesh.dim != self.dim:
            raise GridMismatchError(f"coefficient is {self.dim}D but mesh is {mesh.dim}D")
        cells = tuple(reversed(mesh.n_cells))
        if self.kind == "per_cell_table":
            if self.entries.shape[:-2] != cells:
                raise GridMismatchError(f"coefficient table has cell shape {self.entries.shape[:-2]}, mesh has {cells}")
            return self.entries
        return np.broadcast_to(self.entries, cells + (self.dim, self.dim))


def check_ellipticity(M: CoefficientField) -> float:
    """Smallest value of ``xi . M xi / |xi|^2`` over cells.

    Takes the minimum over a probe set (axis vectors, and the two diagonals in
    2D) together with the exact smallest eigenvalue of the symmetric part, so
    the result is exact for ``d <= 2``.

    Raises:
        NonEllipticError: if the estimate is not positive.
    """
    m = M.matrices
    probes = _probe_directions(M.dim)
    quad = np.einsum("pi,kij,pj->kp", probes, m, probes) / np.sum(probes * probes, axis=1)
    estimate = float(quad.min())
    if M.dim == 2:
        a = m[:, 0, 0]
        c = m[:, 1, 1]
        b = 0.5 * (m[:, 0, 1] + m[:, 1, 0])
        eig_min = 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
        estimate = min(estimate, float(eig_min.min()))
    if not estimate > 0:
        raise NonEllipticError(f"coefficient field is not elliptic: min xi.M xi/|xi|^2 = {estimate}")
    return estimate


def _check_k(k: float) -> None:
    if not k > 0:
        raise ValueError(f"truncation level k must be positive, got {k}")


def t_k(k: float, s: ArrayLike):
    """Truncation at level k: ``max(-k, min(k, s))``."""
    _check_k(k)
    return np.clip(s, -k, k)


def theta_k(k: float, s: ArrayLike):
    """Primitive of ``t_k`` vanishing at 0.

    ``s**2 / 2`` for ``|s| <= k``, else ``k |s| - k**2 / 2``.
    """
    _check_k(k)
    a = np.abs(s)
    return np.where(a <= k, 0.5 * a * a, k * a - 0.5 * k * k)


@dataclass(frozen=True)
class Truncation:
    k: float

    def __post_init__(self):
        _check_k(self.k)

    def __call__(self, s):
        return t_k(self.k, s)

    def primitive(self, s):
        return theta_k(self.k, s)


@dataclass(frozen=True)
class Atom:
    location: tuple[float, ...]
    weight: float


@dataclass(frozen=True, eq=False)
class MeasureData:
    """Finite sum of weighted Dirac atoms plus a sampled density.

    The measure is signed: weights and density may take either sign.
    """

    atoms: tuple[Atom, ...] = ()
    density: NodalField | None = None

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(tuple(float(c) for c in np.atleast_1d(a[0])), float(a[1]))
                      for a in self.atoms)
        for a in atoms:
            if not np.isfinite(a.weight) or not np.all(np.isfinite(a.location)):
                raise ValueError(f"atom {a} has non-finite data")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def dirac(cls, location: float | Sequence[float], weight: float = 1.0) -> "MeasureData":
        return cls(atoms=((tuple(np.atleast_1d(location).astype(float)), weight),))

    def validate(self, mesh: Mesh) -> None:
        """Check that atoms are strictly interior and the density lives on ``mesh``."""
        for a in self.atoms:
            if len(a.location) != mesh.dim:
                raise GridMismatchError(f"atom at {a.location} does not match a {mesh.dim}D mesh")
            if not mesh.contains_strictly(a.location):
                raise BoundaryAtomError(
                    f"atom at {a.location} is not strictly inside the domain; "
                    "boundary and exterior atoms are rejected (solutions vanish on the boundary)"
                )
        if self.density is not None and self.density.mesh != mesh:
            raise GridMismatchError("density is sampled on a different mesh")

    def density_values(self, mesh: Mesh) -> NDArray[np.float64]:
        if self.density is None:
            return np.zeros(mesh.n_interior)
        return self.density.values

    @property
    def is_nonnegative(self) -> bool:
        atoms_ok = all(a.weight >= 0 for a in self.atoms)
        return atoms_ok and (self.density is None or bool(np.all(self.density.values >= 0)))

    @property
    def is_zero(self) -> bool:
        atoms_zero = all(a.weight == 0 for a in self.atoms)
        return atoms_zero and (self.density is None or bool(np.all(self.density.values == 0)))

    def scaled(self, factor: float) -> "MeasureData":
        density = None if self.density is None else NodalField(self.density.mesh, factor * self.density.values)
        return MeasureData(tuple(Atom(a.location, factor * a.weight) for a in self.atoms), density)

    def __add__(self, other: "MeasureData") -> "MeasureData":
        if self.density is None:
            density = other.density
        elif other.density is None:
            density = self.density
        else:
            density = NodalField(self.density.mesh, self.density.values + other.density.values)
        return MeasureData(self.atoms + other.atoms, density)


def total_variation(mu: MeasureData, mesh: Mesh) -> float:
    """Sum of absolute atom weights plus the lumped L1 norm of the density."""
    tv = float(sum(abs(a.weight) for a in mu.atoms))
    if mu.density is not None:
        if mu.density.mesh != mesh:
            raise GridMismatchError("density is sampled on a different mesh")
        tv += l1_norm(mu.density)
    return tv
