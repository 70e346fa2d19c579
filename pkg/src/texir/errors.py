"""Exception hierarchy. The CLI maps these onto exit codes."""


class TexirError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class InputError(TexirError):
    """Bad or missing input data (files, schema, arguments)."""

    exit_code = 2


class FormatError(InputError):
    """A file could not be parsed."""


class TruncatedFileError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class InvariantError(TexirError):
    """A data invariant was violated (e.g. non-finite gradient, bad rotation)."""

    exit_code = 3
