"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """A value violates an operation's precondition."""


class UnsatisfiablePremiseError(RuntimeError):
    """Rejection sampling could not satisfy a relation's source constraints."""


class SkipFollowUp(Exception):
    """The follow-up constraints cannot be met for the current source."""


class DegenerateSuiteError(ValueError):
    """A suite carries a single label, so there is nothing to discriminate."""


class SutProtocolError(RuntimeError):
    """An external program broke the line protocol (bad reply, exit, timeout)."""


class SuiteFormatError(ValueError):
    def __init__(self, message, lineno=None):
        super().__init__(message if lineno is None else f"line {lineno}: {message}")
        self.lineno = lineno
