"""Exception hierarchy shared by every stage of the pipeline."""


class HtsRomError(Exception):
    """Base class for all package errors."""


class DimensionError(HtsRomError, ValueError):
    """Invalid geometric specification or mismatched array shapes."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(HtsRomError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(HtsRomError, ValueError):
    """Invalid configuration. ``errors`` lists every problem found as (path, message)."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [("", errors)]
        self.errors = list(errors)
        lines = [f"{p}: {m}" if p else m for p, m in self.errors]
        super().__init__("; ".join(lines))


class StepFailure(HtsRomError, RuntimeError):
    """A time step could not be completed."""

    def __init__(self, message, step=None, residual=None):
        prefix = "" if step is None else f"step {step}: "
        super().__init__(prefix + message)
        self.step = step
        self.residual = residual


class GaugeError(StepFailure):
    """The saddle-point matrix is singular (missing gauge or degenerate operators)."""


class DependencyError(HtsRomError, FileNotFoundError):
    """A required upstream artifact is missing."""

    def __init__(self, path, producer):
        super().__init__(f"missing artifact {path}; run `{producer}` first")
        self.path = str(path)
        self.producer = producer


class UsageError(HtsRomError, RuntimeError):
    """API used out of order (e.g. backward pass without a forward cache)."""


class MatrixFormatError(HtsRomError, ValueError):
    """Base class for binary matrix file errors."""


class BadMagicError(MatrixFormatError):
    pass


class ChecksumError(MatrixFormatError):
    pass


class TruncatedFileError(MatrixFormatError):
    pass
