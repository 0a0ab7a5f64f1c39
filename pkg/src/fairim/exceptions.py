"""Exception hierarchy shared by the library and the CLI."""


class FairIMError(Exception):
    """Base class for all package errors."""


class DataError(FairIMError, ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, *, source=None, line=None):
        self.source = source
        self.line = line
        prefix = ""
        if source is not None and line is not None:
            prefix = f"{source}:{line}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class MissingProfileError(DataError, KeyError):
    """A user has no entry in the profile table."""

    def __init__(self, user):
        self.user = user
        DataError.__init__(self, f"no profile for user {user!r}")

    def __str__(self):
        return self.args[0]


class NumericalError(FairIMError, ArithmeticError):
    """Training produced a non-finite loss or parameter."""


class ModelFormatError(FairIMError, ValueError):
    """A model file could not be decoded."""
