"""Exception types raised across the package."""


class NsacError(Exception):
    """Base class for all package errors."""


class DegenerateCurve(NsacError):
    pass


class ProjectionAmbiguous(NsacError):
    pass


class OutsideTube(NsacError):
    pass


class InsufficientResolution(NsacError):
    pass


class NonconvergentBVP(NsacError):
    pass


class IncompatibleRHS(NsacError):
    """Right-hand side violates the solvability (Fredholm) condition."""

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class NoDecay(NsacError):
    pass


class LayerUnresolved(NsacError):
    pass


class StepRejected(NsacError):
    """Time step violated a stability bound; ``suggested_dt`` is safe."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class SolverNonconvergence(NsacError):
    pass


class MultipleComponents(NsacError):
    pass


class NoCrossing(NsacError):
    pass


class CurvatureBlowup(NsacError):
    pass


class NonConvergence(NsacError):
    """Eigen-solver did not converge."""


class NonPositiveError(NsacError):
    pass


class ConfigError(NsacError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class StencilFailure(NsacError):
    """A one-sided stencil left the region where a field is defined."""
