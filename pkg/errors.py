"""
Exception hierarchy for the axis-anchored line toolkit.

Every error is also a ValueError so callers that only guard against bad
input values keep working.
"""


class AxisLineError(ValueError):
    """Base class for all errors raised by this package"""


# Geometry
class InvalidLineError(AxisLineError):
    pass


class InvalidDirectionError(AxisLineError):
    pass


class BehindCameraError(AxisLineError):
    pass


class DegenerateProjectionError(AxisLineError):
    pass


class ParallelRayError(AxisLineError):
    """Line is parallel to the anchor back-projection ray"""


# Principal axes
class NoCandidatesError(AxisLineError):
    pass


class InconsistentGraphError(AxisLineError):
    pass


# Vanishing points
class UnderdeterminedError(AxisLineError):
    pass


class DegenerateClusterError(AxisLineError):
    pass


# Bundle adjustment
class InvalidGraphError(AxisLineError):
    pass


class InvalidDepthError(AxisLineError):
    pass


# Synthetic scenes
class EmptySceneError(AxisLineError):
    pass


class MismatchError(AxisLineError):
    pass


class ConfigError(AxisLineError):
    """
    Configuration problem tied to a field.

    Args:
        field: dotted path of the offending field (e.g. "lm.max_iters")
        message: what is wrong with it
        line: line number in the config file, when known
    """

    def __init__(self, field: str, message: str, line: int = None):
        self.field = field
        self.line = line
        where = f"{field} (line {line})" if line is not None else field
        super().__init__(f"{where}: {message}")
