"""Exception hierarchy shared by every module."""


class CarnotGapError(Exception):
    """Base class for all library errors."""


class InvalidArgument(CarnotGapError, ValueError):
    pass


class StructureError(CarnotGapError, ValueError):
    """A group, field or file fails an exact structural invariant."""


class DomainError(CarnotGapError, ValueError):
    """Query at a point where the quantity is undefined (typically the origin)."""


class UnsupportedOperation(CarnotGapError):
    pass


class PreconditionFailed(CarnotGapError):
    pass


class NotFound(CarnotGapError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DictionaryDegenerate(CarnotGapError):
    def __init__(self, message, removed=()):
        super().__init__(message)
        self.removed = list(removed)


class NumericFailure(CarnotGapError):
    """Non-finite values or a solver that did not converge."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point
