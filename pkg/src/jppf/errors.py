"""Exception hierarchy.

Everything raised on bad input derives from :class:`InputError` so the CLI can
map it to exit code 2; :class:`InvariantViolation` signals a bug (exit code 3).
"""


class JPPFError(Exception):
    pass


class InputError(JPPFError, ValueError):
    pass


class InvariantViolation(JPPFError, AssertionError):
    pass


class UnknownGroupForClass(InputError):
    pass


class FieldOverflow(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class BoxOutOfCanvas(InputError):
    pass


class NotAThingClass(InputError):
    pass


class MissingBackgroundChannel(InputError):
    pass


class InvalidTaxonomy(InputError):
    pass


class InvalidSpec(InputError):
    pass


class LogitRangeError(InputError):
    pass


class BadMagic(InputError):
    pass


class UnsupportedVersion(InputError):
    pass


class TruncatedPayload(InputError):
    pass


class DecodeError(InputError):
    pass
