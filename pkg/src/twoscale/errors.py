"""Exception hierarchy shared by every solver stage."""


class TwoScaleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TwoScaleError, ValueError):
    """An argument is outside its admissible range."""


class EllipticityError(InvalidArgumentError):
    """A diffusivity value lies below its declared ellipticity floor."""


class DegenerateKineticsError(InvalidArgumentError):
    """Reaction rates cannot be inverted to build the bounds envelope."""


class ConfigError(InvalidArgumentError):
    """Configuration file is malformed or fails validation."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class SnapshotFormatError(InvalidArgumentError):
    """A snapshot CSV file could not be parsed."""

    def __init__(self, message, *, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class SolverError(TwoScaleError, RuntimeError):
    """Base class for numerical failures."""


class NonlinearSolverError(SolverError):
    """Damped Newton did not reach the requested residual."""

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class ContractionError(SolverError):
    """A Picard iteration exhausted its budget without converging."""

    def __init__(self, message, history, t=None):
        self.history = list(history)
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        last = f", last residual {self.history[-1]:.3e}" if self.history else ""
        super().__init__(f"{message}{where} after {len(self.history)} iterations{last}")


class SingularSystemError(SolverError):
    """Sparse factorization broke down."""
