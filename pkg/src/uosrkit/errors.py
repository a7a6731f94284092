"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures without a lookup table: 1 for IO, 2 for validation/config, 3 for an
internal invariant violation.
"""


class UosrError(Exception):
    exit_code = 2


class IoFailure(UosrError):
    exit_code = 1


class ValidationError(UosrError):
    exit_code = 2


class MalformedHeader(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class RowCountMismatch(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class MissingComponent(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptyInD(ValidationError):
    pass


class EmptyClass(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class KOutOfRange(ValidationError):
    pass


class EmptyPool(ValidationError):
    pass


class ShotsExceedClassSize(ValidationError):
    pass


class BadSpec(ValidationError):
    pass


class InvariantViolation(UosrError):
    exit_code = 3
