"""Uniform tensor grids on intervals and rectangles.

Nodes are numbered lexicographically with x fastest. Boundary nodes carry the
homogeneous Dirichlet value and are eliminated, so every nodal field stores
one value per interior node, in the same x-fastest order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class Mesh:
    """Uniform grid on ``(0, L_1) x ... x (0, L_dim)`` with ``dim`` in {1, 2}.

    Attributes:
        dim: spatial dimension.
        extents: domain length per axis.
        n_cells: number of cells per axis (at least 2).
    """

    dim: int
    extents: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim or len(self.n_cells) != self.dim:
            raise ValueError(
                f"extents and n_cells need {self.dim} entries, got {len(self.extents)} and {len(self.n_cells)}"
            )
        for length in self.extents:
            if not (np.isfinite(length) and length > 0):
                raise ValueError(f"extents must be positive, got {self.extents}")
        for n in self.n_cells:
            if int(n) != n or n < 2:
                raise ValueError(f"n_cells must be integers >= 2 (no interior node otherwise), got {self.n_cells}")

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(length / n for length, n in zip(self.extents, self.n_cells))

    @property
    def interior_shape(self) -> tuple[int, ...]:
        """Interior nodes per axis, x first."""
        return tuple(n - 1 for n in self.n_cells)

    @property
    def n_interior(self) -> int:
        return int(np.prod(self.interior_shape))

    @property
    def n_nodes(self) -> int:
        return int(np.prod([n + 1 for n in self.n_cells]))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def _grid_index(self) -> NDArray[np.int64]:
        # global index of every node laid out as [j, i] (2D) or [i] (1D)
        shape = tuple(n + 1 for n in reversed(self.n_cells))
        return np.arange(self.n_nodes).reshape(shape)

    @cached_property
    def interior_nodes(self) -> NDArray[np.int64]:
        """Global indices of interior nodes, in unknown order."""
        inner = (slice(1, -1),) * self.dim
        return self._grid_index[inner].ravel()

    @cached_property
    def boundary_nodes(self) -> NDArray[np.int64]:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.interior_nodes] = False
        return np.flatnonzero(mask)

    def node_coords(self, global_index: ArrayLike) -> NDArray[np.float64]:
        """Coordinates of global node indices, shape ``(k, dim)``."""
        g = np.atleast_1d(np.asarray(global_index, dtype=np.int64))
        if self.dim == 1:
            return (g * self.h[0])[:, None]
        stride = self.n_cells[0] + 1
        return np.column_stack([(g % stride) * self.h[0], (g // stride) * self.h[1]])

    @cached_property
    def coords(self) -> NDArray[np.float64]:
        """Interior node coordinates, shape ``(n_interior, dim)``."""
        out = self.node_coords(self.interior_nodes)
        out.flags.writeable = False
        return out

    @cached_property
    def quad_weights(self) -> NDArray[np.float64]:
        """Lumped quadrature weight of each interior node (the cell volume)."""
        w = np.full(self.n_interior, self.cell_volume)
        w.flags.writeable = False
        return w

    def contains_strictly(self, point: Sequence[float]) -> bool:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            return False
        return bool(np.all(p > 0.0) and np.all(p < np.asarray(self.extents)))

    def sample(self, func) -> "NodalField":
        """Nodal field with ``func`` evaluated at interior coordinates.

        ``func`` receives one coordinate array per axis.
        """
        values = func(*(self.coords[:, d] for d in range(self.dim)))
        return NodalField(self, np.broadcast_to(np.asarray(values, dtype=float), (self.n_interior,)))

    def zeros(self) -> "NodalField":
        return NodalField(self, np.zeros(self.n_interior))


def build_mesh(dim: int, extents: Sequence[float], n_cells: Sequence[int]) -> Mesh:
    """Build a uniform mesh, e.g. ``build_mesh(1, [1.0], [4])``."""
    return Mesh(int(dim), tuple(float(e) for e in extents), tuple(int(n) for n in n_cells))


class NodalField:
    """Values at the interior nodes of a mesh; boundary values are zero.

    Immutable. Behaves as an array through ``np.asarray(field)``.
    """

    __slots__ = ("mesh", "values")

    def __init__(self, mesh: Mesh, values: ArrayLike):
        arr = np.array(values, dtype=float).reshape(-1)
        if arr.shape != (mesh.n_interior,):
            raise ValueError(f"expected {mesh.n_interior} interior values, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("nodal values must be finite")
        arr.flags.writeable = False
        self.mesh = mesh
        self.values = arr

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"NodalField(n={self.values.size}, l1={l1_norm(self):.6g}, linf={linf_norm(self):.6g})"


def l1_norm(f: NodalField) -> float:
    """Lumped-quadrature L1 norm: sum of weight * |value|."""
    return float(np.dot(f.mesh.quad_weights, np.abs(f.values)))


def linf_norm(f: NodalField) -> float:
    if f.values.size == 0:
        return 0.0
    return float(np.max(np.abs(f.values)))
