"""Exception hierarchy."""


class MeasureHeatError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MeasureHeatError, ValueError):
    """Experiment configuration failed validation."""


class NonEllipticError(MeasureHeatError, ValueError):
    """Coefficient field fails the ellipticity check."""


class BoundaryAtomError(MeasureHeatError, ValueError):
    """A Dirac atom lies on or outside the domain boundary.

    Atoms must lie strictly inside the domain: the solution vanishes on the
    boundary, so a boundary atom has no discrete image.
    """


class GridMismatchError(MeasureHeatError, ValueError):
    """Fields or trajectories live on incompatible meshes or time grids."""


class SolverError(MeasureHeatError, RuntimeError):
    """A linear or eigenvalue solve failed."""


class SingularOperatorError(SolverError):
    """The operator is singular to working precision."""


class NonConvergenceError(SolverError):
    """An iterative method hit its iteration cap.

    Attributes:
        residual: final residual norm reached.
        iterations: number of iterations performed.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations
