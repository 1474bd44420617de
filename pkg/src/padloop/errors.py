"""Exception hierarchy shared by every module."""


class PadloopError(Exception):
    """Base class for all library errors."""


class InvalidInputError(PadloopError, ValueError):
    """Arguments violate a documented precondition (shape, range, ordering)."""


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but carries no usable information, e.g. a constant series."""


class NumericalFailureError(PadloopError, ArithmeticError):
    """A factorization or solve failed even after regularization."""


class FormatError(PadloopError):
    """A persisted file is malformed.

    The message names the line and field that failed to parse.
    """

    def __init__(self, path, message, line=None, field=None):
        self.path = str(path)
        self.line = line
        self.field = field
        where = self.path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


class VersionError(FormatError):
    """A persisted file was written by an unsupported format version."""

    def __init__(self, path, found, supported):
        self.found = found
        self.supported = supported
        super().__init__(
            path, f"format_version {found} is not supported (this build reads version {supported})"
        )
