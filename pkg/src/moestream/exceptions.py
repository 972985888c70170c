"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not conform to the declared layout."""


class NumericError(RuntimeError):
    """A computation produced non-finite or otherwise invalid numbers."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class InvariantViolation(RuntimeError):
    """A statistic left the admissible convex set."""


class SolverError(RuntimeError):
    """A closed-form parameter solve failed; carries the offending block name."""

    def __init__(self, message, block=None):
        if block is not None:
            message = f"{message} [block: {block}]"
        super().__init__(message)
        self.block = block


class StateError(RuntimeError):
    """An operation was called before its state was ready."""
