"""Exception and warning types shared across the package."""


class TshnError(Exception):
    """Base class for all package errors."""


# sigsynth
class UnsupportedModulation(TshnError, ValueError):
    pass


class InsufficientTrusted(TshnError):
    """Raised when the trusted split leaves some class without samples."""

    def __init__(self, classes, message=None):
        self.classes = list(classes)
        super().__init__(message or f"no trusted samples for classes {self.classes}")


class DatasetFormatError(TshnError):
    pass


# noiselab
class InvalidPair(TshnError, ValueError):
    pass


class UndefinedRow(TshnError, ValueError):
    pass


# gradnet
class ShapeError(TshnError, ValueError):
    pass


class GraphError(TshnError, RuntimeError):
    pass


class DegenerateVector(TshnError, ValueError):
    pass


class FaultReport(TshnError, FloatingPointError):
    """Non-finite value detected; ``where`` names the op or parameter."""

    def __init__(self, where, message=None):
        self.where = where
        super().__init__(message or f"non-finite value in {where}")


# protomind
class NeedTwoClasses(TshnError, ValueError):
    pass


class MissingClass(TshnError, ValueError):
    pass


class NotWarmedUp(TshnError, RuntimeError):
    pass


class UnknownSample(TshnError, KeyError):
    pass


# mvs
class SegmentationError(TshnError, ValueError):
    pass


# evalbench
class EmptySplit(TshnError, ValueError):
    pass


class ConfigError(TshnError, ValueError):
    pass


class ShotsReduced(UserWarning):
    """A class had too few trusted samples for the requested shots/queries."""

    def __init__(self, cls, shots, queries, available):
        self.cls = cls
        self.shots = shots
        self.queries = queries
        self.available = available
        super().__init__(
            f"class {cls}: only {available} trusted samples, using {shots} shots / {queries} queries"
        )


class LossClampWarning(UserWarning):
    pass


class GlcFallbackWarning(UserWarning):
    pass
