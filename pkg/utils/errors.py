"""Exception types shared by the library, the pipeline nodes and the CLI.

The CLI maps them onto exit codes: ConfigurationError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class PlsrError(Exception):
    """Base class for every error raised on purpose by this project."""


class ConfigurationError(PlsrError, ValueError):
    """Bad argument, out-of-range setting or unusable combination of options."""


class DataError(PlsrError, ValueError):
    """Malformed, inconsistent or missing input data."""


class NumericalError(PlsrError, RuntimeError):
    """A numerical procedure could not proceed."""


class InvalidStartError(NumericalError):
    def __init__(self, message="invalid start"):
        super().__init__(message)


class SingularPreconditionerError(NumericalError):
    def __init__(self, message="singular preconditioner"):
        super().__init__(message)


class RetractionBreakdownError(NumericalError):
    def __init__(self, message="retraction breakdown"):
        super().__init__(message)
