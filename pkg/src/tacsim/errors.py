"""Exception types shared across the simulator.

The CLI maps these onto stable exit codes: validation and file-format
problems exit 2, numerical failures (non-convergence, singular geometry)
exit 3. Everything derives from ValueError or RuntimeError so library
callers can stay generic if they want to.
"""


class ValidationError(ValueError):
    """A value violates a documented contract (bad field, bad argument)."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class BoundsError(ValidationError):
    """A pose or coordinate falls outside the sensor's active area."""


class ConfigParseError(ValidationError):
    """Sensor config text could not be parsed; carries a line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RasterFormatError(ValidationError):
    """A raster file is malformed, truncated, or has absurd dimensions."""


class ModelFormatError(ValidationError):
    """A reflectance model file is malformed or truncated."""


class NumericalError(RuntimeError):
    """Base class for numerical failures (exit code 3 in the CLI)."""


class SingularProjectionError(NumericalError):
    """Projection ray is parallel to the shadow plane (q'_w ~ 0)."""


class DegenerateGeometryError(NumericalError):
    """Geometry does not determine a solution (parallel rays, point on/inside ball)."""


class FitConvergenceError(NumericalError):
    """An iterative fit failed to converge; carries the best iterate and trace."""

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace if trace is not None else []


class TrainingDivergedError(NumericalError):
    """Training loss went non-finite; carries the offending epoch."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
