"""Exception types raised by the solver."""


class InvalidFieldError(ValueError):
    """A field holds non-finite values or has the wrong shape."""


class GridMismatchError(ValueError):
    """Two operands live on different grids."""


class InsufficientNodesError(ValueError):
    pass


class NotFreeSpaceError(ValueError):
    """The field is not negligible on the box boundary."""


class InsufficientRangeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SchemeError(RuntimeError):
    """Base class for failures of the time-stepping scheme."""

    def __init__(self, message, *, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class BlowUpError(SchemeError):
    def __init__(self, message, *, node=None, step=None):
        if node is not None:
            message = f"{message} (node {node})"
        super().__init__(message, step=step)
        self.node = node


class DivergenceError(SchemeError):
    """Picard sub-iteration stopped contracting."""


class NoContractionError(SchemeError):
    pass


class NonstarInnerDivergenceError(SchemeError):
    pass
