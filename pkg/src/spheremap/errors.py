"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """A series or iterative evaluation exceeded its term budget."""


class MalformedFileError(ValueError):
    """A binary input file violates its documented layout.

    Attributes
    ----------
    offset : int or None
        Byte offset at which the violation was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset
