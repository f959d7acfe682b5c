"""Exception hierarchy shared by every stage of the pipeline.

Each class carries the process exit status the command-line front end uses
when the error escapes a subcommand.
"""


class DksPoseError(Exception):
    exit_code = 1


class ConfigurationError(DksPoseError, ValueError):
    """Bad parameter, shape mismatch or malformed config/suite file."""

    exit_code = 2


class ValidationError(DksPoseError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 3


class EmptyInputError(ValidationError):
    pass


class GeometryError(DksPoseError):
    """Geometric precondition failed (object behind camera, degenerate fit)."""

    exit_code = 4


class DegenerateCorrespondenceError(GeometryError):
    pass


class TrainingDivergedError(DksPoseError, FloatingPointError):
    exit_code = 5

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
