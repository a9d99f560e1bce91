"""Exception hierarchy shared by every eicue module."""


class EicueError(Exception):
    """Base class for all library errors."""


class InvalidInput(EicueError):
    """Caller violated a documented precondition (shape, range, dtype)."""


class InvalidState(EicueError):
    """Cached state no longer matches the parameters it was built from."""


class NumericalFailure(EicueError):
    """An iterative routine exceeded its budget or produced non-finite values."""


class FormatError(EicueError):
    """A file does not conform to its declared container format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateGraph(EicueError):
    """The affinity graph has an isolated patch: a degree is (near) zero."""


class DegenerateInput(EicueError):
    """Input carries no usable signal (e.g. constant vector to a thresholder)."""


class DegenerateContrast(EicueError):
    """Fewer than two objects present: a contrastive term is undefined."""


class SkipTerm(EicueError):
    """A loss term cannot be formed for this sample and should be skipped."""
