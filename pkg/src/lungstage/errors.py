"""Exception hierarchy shared across the package.

Everything raised on bad input derives from :class:`LungStageError`, so the
CLI can map "data problem" to one exit code and genuine bugs to another.
"""


class LungStageError(Exception):
    """Base class for all errors raised by this package."""


class MissingFile(LungStageError):
    pass


class ParseError(LungStageError):
    pass


class ValidationError(LungStageError):
    """Invariant violation in user-supplied data.  ``field`` names the culprit."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class DecodeError(LungStageError):
    pass


class DimsMismatch(LungStageError):
    pass


class EmptyInput(LungStageError):
    pass


class TileTooSmall(LungStageError):
    pass


class EmptyMask(LungStageError):
    pass


class DegenerateBox(LungStageError):
    pass


class ShapeMismatch(LungStageError):
    pass


class LengthMismatch(LungStageError):
    pass


class NoTumor(LungStageError):
    pass


class InvalidProperties(LungStageError):
    pass


class GeometryInfeasible(LungStageError):
    pass
