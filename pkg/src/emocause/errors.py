"""Exception hierarchy shared by every pipeline stage."""


class EmocauseError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(EmocauseError, ValueError):
    """An operation was called with arguments that break its preconditions."""


class InputError(EmocauseError, ValueError):
    """User-supplied data (files, corpus records, command arguments) is invalid."""


class BackendError(EmocauseError, RuntimeError):
    """A pluggable backend (encoder, detection head, generator) failed.

    ``payload`` carries the raw backend reply, when one exists, so callers
    can log what actually came over the wire.
    """

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class FormatError(EmocauseError, ValueError):
    """A binary container could not be parsed.

    ``code`` is a stable machine-readable identifier (one per corruption
    class) and ``offset`` is the byte position where parsing failed.
    """

    def __init__(self, code: str, offset: int, message: str):
        super().__init__(f"{message} (code={code}, byte offset {offset})")
        self.code = code
        self.offset = offset
