"""JSON experiment configuration.

One experiment per file. Unknown keys are rejected at every level. Example::

    {
      "mesh": {"dim": 1, "extents": [1.0], "n_cells": [64]},
      "coefficient": {"kind": "constant_scalar", "values": 1.0},
      "measure": {"atoms": [{"x": 0.5, "weight": 1.0}]},
      "u0": {"preset": "zero"},
      "time": {"dt": 0.0078125, "tol": 1e-8},
      "output": {"dir": "out"},
      "seed": 0
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from measure_heat.errors import ConfigError
from measure_heat.mesh import Mesh, NodalField, build_mesh
from measure_heat.model import Atom, CoefficientField, MeasureData


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class MeshSpec(_Strict):
    dim: Literal[1, 2]
    extents: list[float]
    n_cells: list[int]


class CoefficientSpec(_Strict):
    kind: Literal["constant_scalar", "constant_matrix", "per_cell_table"] = "constant_scalar"
    values: Union[float, list] = 1.0
    alpha: Optional[float] = None


class AtomSpec(_Strict):
    x: float
    y: Optional[float] = None
    weight: float = 1.0


class DensitySpec(_Strict):
    """``constant`` uses ``value``; ``random`` draws uniform values in [0, value) from the seed."""

    preset: Literal["constant", "random", "table"]
    value: float = 1.0
    data: Optional[list[float]] = None


class MeasureSpec(_Strict):
    atoms: list[AtomSpec] = Field(default_factory=list)
    density: Optional[DensitySpec] = None


class U0Spec(_Strict):
    preset: Literal["zero", "green_scaled", "sine", "linear_signed", "table", "random"] = "zero"
    lam: float = Field(1.0, alias="lambda")
    data: Optional[list[float]] = None


class SourceSpec(_Strict):
    """Retrograde source ``g``: a density, piecewise constant per time step.

    ``table`` data is one field (constant in time) or one field per step.
    """

    preset: Literal["zero", "constant", "random", "table"] = "zero"
    value: float = 1.0
    data: Optional[Union[list[float], list[list[float]]]] = None


class TimeSpec(_Strict):
    dt: float = Field(gt=0)
    t_end: Optional[float] = Field(None, gt=0)
    tol: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, gt=0)


class OutputSpec(_Strict):
    dir: str = "out"
    checkpoint_stride: Optional[int] = Field(None, ge=1)


class ExperimentConfig(_Strict):
    mesh: MeshSpec
    coefficient: CoefficientSpec = Field(default_factory=CoefficientSpec)
    measure: MeasureSpec = Field(default_factory=MeasureSpec)
    u0: U0Spec = Field(default_factory=U0Spec)
    g: SourceSpec = Field(default_factory=SourceSpec)
    time: Optional[TimeSpec] = None
    output: OutputSpec = Field(default_factory=OutputSpec)
    seed: int = 0

    @model_validator(mode="after")
    def _check_time(self):
        t = self.time
        if t is not None and t.t_end is None and t.tol is None:
            raise ValueError("time needs either t_end or tol")
        return self

    def dumps(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)


def parse_config(text: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration:\n{exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


@dataclass(frozen=True, eq=False)
class Experiment:
    """Validated problem objects built from a config."""

    config: ExperimentConfig
    mesh: Mesh
    coefficient: CoefficientField
    measure: MeasureData
    seed: int

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    def initial_data(self, v: NodalField | None = None) -> NodalField:
        opts = self.config.u0
        mesh = self.mesh
        if opts.preset == "zero":
            return mesh.zeros()
        if opts.preset == "green_scaled":
            if v is None:
                from measure_heat.solvers import solve_elliptic

                v = solve_elliptic(mesh, self.coefficient, self.measure)
            return NodalField(mesh, opts.lam * v.values)
        if opts.preset == "sine":
            ext = mesh.extents
            return mesh.sample(lambda *xs: np.prod([np.sin(np.pi * x / L) for x, L in zip(xs, ext)], axis=0))
        if opts.preset == "linear_signed":
            return mesh.sample(lambda x, *rest: x / mesh.extents[0] - 0.5)
        if opts.preset == "random":
            return NodalField(mesh, self.rng(1).uniform(-1.0, 1.0, mesh.n_interior))
        return _table_field(mesh, opts.data, "u0")

    def source_schedule(self, n_steps: int) -> np.ndarray:
        opts = self.config.g
        n = self.mesh.n_interior
        if opts.preset == "zero":
            return np.zeros((n_steps, n))
        if opts.preset == "constant":
            return np.full((n_steps, n), opts.value)
        if opts.preset == "random":
            return self.rng(2).normal(0.0, opts.value, (n_steps, n))
        arr = np.asarray(opts.data, dtype=float) if opts.data is not None else None
        if arr is None:
            raise ConfigError("g preset 'table' needs data")
        if arr.ndim == 1:
            if arr.size != n:
                raise ConfigError(f"g table needs {n} values, got {arr.size}")
            return np.broadcast_to(arr, (n_steps, n)).copy()
        if arr.shape != (n_steps, n):
            raise ConfigError(f"g table needs shape ({n_steps}, {n}), got {arr.shape}")
        return arr


def _table_field(mesh: Mesh, data, what: str) -> NodalField:
    if data is None:
        raise ConfigError(f"{what} preset 'table' needs data")
    if len(data) != mesh.n_interior:
        raise ConfigError(f"{what} table needs {mesh.n_interior} interior values, got {len(data)}")
    return NodalField(mesh, data)


def build_experiment(cfg: ExperimentConfig, seed: int | None = None) -> Experiment:
    """Validate every precondition that can be checked before solving.

    Raises:
        ConfigError: wrapping any validation failure (boundary atoms,
            non-elliptic coefficients, malformed tables, ...).
    """
    seed = cfg.seed if seed is None else seed
    try:
        m = cfg.mesh
        mesh = build_mesh(m.dim, m.extents, m.n_cells)
        c = cfg.coefficient
        coefficient = CoefficientField(mesh.dim, c.kind, np.asarray(c.values, dtype=float), c.alpha)
        coefficient.cell_matrices(mesh)
        atoms = []
        for a in cfg.measure.atoms:
            if (a.y is None) != (mesh.dim == 1):
                raise ConfigError(f"atom {a.model_dump()} does not match a {mesh.dim}D mesh")
            loc = (a.x,) if mesh.dim == 1 else (a.x, a.y)
            atoms.append(Atom(loc, a.weight))
        density = None
        d = cfg.measure.density
        if d is not None:
            if d.preset == "constant":
                density = NodalField(mesh, np.full(mesh.n_interior, d.value))
            elif d.preset == "random":
                density = NodalField(mesh, np.random.default_rng([seed, 3]).uniform(0.0, d.value, mesh.n_interior))
            else:
                density = _table_field(mesh, d.data, "density")
        measure = MeasureData(tuple(atoms), density)
        measure.validate(mesh)
        exp = Experiment(cfg, mesh, coefficient, measure, seed)
        if cfg.u0.preset == "table":
            exp.initial_data()
        if cfg.g.preset == "table" and cfg.time is not None and cfg.time.t_end is not None:
            from measure_heat.solvers import TimeGrid

            exp.source_schedule(TimeGrid.covering(cfg.time.dt, cfg.time.t_end).n_steps)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return exp
