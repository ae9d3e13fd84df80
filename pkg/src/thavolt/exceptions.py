"""Exception types raised across the package."""


class DeskScaleError(ValueError):
    """A dense Q-dimensional object was requested beyond the size guard."""

    def __init__(self, what, size, guard):
        self.size = size
        self.guard = guard
        super().__init__(
            f"{what} needs {size} entries, above the desk-scale guard "
            f"({guard}); use the kernel / TT paths instead"
        )


class GaugeError(ValueError):
    """A TT was not in the orthogonal gauge an operation requires."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap.

    The last iterate and its residual are kept on the exception so callers
    can inspect or fall back to them.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual
