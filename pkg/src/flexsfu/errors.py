"""Exception types raised across the package."""


class FlexSfuError(Exception):
    pass


class InvalidInputError(FlexSfuError, ValueError):
    """Non-finite or NaN operand where a finite value is required."""


class InvalidArgumentError(FlexSfuError, ValueError):
    pass


class TooFewBreakpointsError(InvalidArgumentError):
    pass


class DivergedError(FlexSfuError, ArithmeticError):
    """The fit objective became non-finite."""


class CapacityError(FlexSfuError, ValueError):
    """Model needs more segments than the LUT depth provides."""


class ConfigurationError(FlexSfuError, ValueError):
    pass


class NotReadyError(FlexSfuError, RuntimeError):
    """exe.af issued before both memories were loaded."""
