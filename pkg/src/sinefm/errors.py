"""Exception hierarchy shared across the package."""


class SineFMError(Exception):
    """Base class for all package errors."""


class ShapeError(SineFMError, ValueError):
    """Tensor extents do not line up."""


class GraphStateError(SineFMError, RuntimeError):
    """A computation record was used after it was consumed."""


class ValidationError(SineFMError, ValueError):
    """An input failed a semantic check (descriptor chain, determinism, ...)."""


class FormatError(SineFMError, ValueError):
    """A serialized payload is malformed or truncated."""


class ChecksumError(FormatError):
    """Payload bytes do not match the stored checksum."""

    def __init__(self, message, offset):
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """Payload uses a version or tag this build does not understand."""


class NumericError(SineFMError, ArithmeticError):
    """Non-finite values appeared during optimization."""
