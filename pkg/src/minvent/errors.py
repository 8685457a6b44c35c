"""Exception hierarchy shared across the package."""


class MinventError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MinventError, ValueError):
    """A shape or precondition contract was violated."""


class InputError(MinventError, ValueError):
    """Rejected input: an out-of-range parameter or malformed request."""


class ConstructionError(MinventError, ValueError):
    """A network description cannot be built (bad lengths, cycles, ...)."""


class FormatError(MinventError):
    """Base class for on-disk format problems."""


class HeaderError(FormatError):
    """Bad magic bytes, unknown version or malformed header."""


class VersionError(HeaderError):
    """File written by an unsupported format version."""


class TruncatedError(FormatError):
    """The file ends before the declared payload does."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ChecksumError(FormatError):
    """CRC32 trailer does not match the file contents."""


class NumericError(MinventError, ArithmeticError):
    """Training produced a non-finite loss."""


class DegenerateInputError(MinventError, ValueError):
    """Statistic is undefined for the given data (zero variance, all ties)."""
