"""Exception hierarchy.

``InputError`` subclasses are problems with user-supplied files or arguments
(CLI exit code 2); ``RuntimeFailure`` subclasses are backend/runtime problems
(exit code 3).
"""


class MapError(Exception):
    pass


class InputError(MapError):
    pass


class RuntimeFailure(MapError):
    pass


class MalformedRecord(InputError, ValueError):
    pass


class UnknownLabel(InputError, ValueError):
    pass


class MissingTable(InputError):
    pass


class MissingColumn(InputError):
    pass


class UnmappedCode(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InsufficientCases(InputError):
    pass


class DuplicateDocId(InputError):
    pass


class EmptyIndex(InputError):
    pass


class DimensionMismatch(InputError, ValueError):
    pass


class LengthMismatch(InputError, ValueError):
    pass


class EmptyMatrix(InputError, ValueError):
    pass


class BackendUnavailable(RuntimeFailure):
    pass


class BadResponse(RuntimeFailure):
    pass
