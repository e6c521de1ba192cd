"""Discrete laboratory for linear parabolic problems with measure data.

Solves ``u_t - div(M(x) grad u) = mu`` on tensor grids together with its
elliptic steady state and the retrograde adjoint problem, and checks duality
identities, comparison/contraction estimates and long-time convergence.
"""

from measure_heat.errors import (
    BoundaryAtomError,
    ConfigError,
    GridMismatchError,
    MeasureHeatError,
    NonConvergenceError,
    NonEllipticError,
    SingularOperatorError,
    SolverError,
)
from measure_heat.mesh import Mesh, NodalField, build_mesh, l1_norm, linf_norm
from measure_heat.model import (
    CoefficientField,
    MeasureData,
    Truncation,
    check_ellipticity,
    t_k,
    theta_k,
    total_variation,
)
from measure_heat.assembly import (
    SparseOperator,
    assemble_mass,
    assemble_stiffness,
    discretize_measure,
    solve_linear,
)
from measure_heat.solvers import (
    TimeGrid,
    Trajectory,
    solve_elliptic,
    solve_parabolic,
    solve_retrograde,
    spectral_oracle_1d,
    step_parabolic,
)
from measure_heat.duality import (
    DualityReport,
    OrderingVerdict,
    check_super_sub,
    duality_residual,
    elliptic_duality_residual,
)
from measure_heat.asymptotics import (
    DecayCurve,
    bracket_run,
    monotone_approach_check,
    run_to_steady,
    smallest_eigenvalue,
    smallest_rate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryAtomError",
    "CoefficientField",
    "ConfigError",
    "DecayCurve",
    "DualityReport",
    "GridMismatchError",
    "MeasureData",
    "MeasureHeatError",
    "Mesh",
    "NodalField",
    "NonConvergenceError",
    "NonEllipticError",
    "OrderingVerdict",
    "SingularOperatorError",
    "SolverError",
    "SparseOperator",
    "TimeGrid",
    "Trajectory",
    "Truncation",
    "assemble_mass",
    "assemble_stiffness",
    "bracket_run",
    "build_mesh",
    "check_ellipticity",
    "check_super_sub",
    "discretize_measure",
    "duality_residual",
    "elliptic_duality_residual",
    "l1_norm",
    "linf_norm",
    "monotone_approach_check",
    "run_to_steady",
    "smallest_eigenvalue",
    "smallest_rate",
    "solve_elliptic",
    "solve_linear",
    "solve_parabolic",
    "solve_retrograde",
    "spectral_oracle_1d",
    "step_parabolic",
    "t_k",
    "theta_k",
    "total_variation",
]
