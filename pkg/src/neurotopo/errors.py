"""Exception types shared across the package."""


class NeurotopoError(Exception):
    pass


class DimensionError(NeurotopoError, ValueError):
    """Shapes or lengths of inputs do not agree."""


class PreconditionError(NeurotopoError, ValueError):
    """An input violates a documented precondition."""


class NumericError(NeurotopoError, ArithmeticError):
    """A loss, gradient or update produced a non-finite value.

    ``index`` is the first offending particle row when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FormatError(NeurotopoError, ValueError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateCloudError(NeurotopoError, ValueError):
    pass


class MalformedComplexError(NeurotopoError, ValueError):
    pass


class SimplexBudgetError(NeurotopoError, RuntimeError):
    pass


class SamplingError(NeurotopoError, RuntimeError):
    pass


class ConfigError(NeurotopoError, ValueError):
    pass
