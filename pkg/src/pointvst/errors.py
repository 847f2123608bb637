"""Exception hierarchy shared by every pointvst module."""


class PointVSTError(Exception):
    pass


# tensor engine
class ShapeError(PointVSTError, ValueError):
    def __init__(self, primitive, *shapes, detail=""):
        self.primitive = primitive
        self.shapes = shapes
        msg = f"{primitive}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnsupportedPrimitive(PointVSTError, KeyError):
    pass


class ContractError(PointVSTError, RuntimeError):
    pass


class TapeConsumedError(ContractError):
    pass


class NoTapeError(ContractError):
    pass


class DeterminismError(PointVSTError, RuntimeError):
    pass


# geometry
class DegenerateCloudError(PointVSTError, ValueError):
    pass


class DegenerateHullError(PointVSTError, ValueError):
    pass


# model / training / evaluation
class InsufficientPointsError(PointVSTError, ValueError):
    pass


class ConfigError(PointVSTError, ValueError):
    pass


class NumericalError(PointVSTError, FloatingPointError):
    pass


class ArchitectureMismatchError(PointVSTError, ValueError):
    pass


class DegenerateLabelsError(PointVSTError, ValueError):
    pass


class DegenerateVectorError(PointVSTError, ValueError):
    pass


# file formats
class FormatError(PointVSTError, ValueError):
    pass


class ParseError(FormatError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCloudError(FormatError):
    pass
