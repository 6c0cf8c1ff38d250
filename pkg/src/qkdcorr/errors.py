"""Exception hierarchy shared by the library and the command line."""


class QKDCorrError(Exception):
    """Base class for all package errors."""


class ConfigError(QKDCorrError):
    """Invalid or inconsistent configuration.  ``problems`` lists every issue found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(QKDCorrError):
    """A table or configuration file could not be read."""


class DataError(QKDCorrError):
    """Input data violates a physical constraint (e.g. negative intensity)."""


class ContractError(QKDCorrError, ValueError):
    """A function was called with arguments outside its domain."""


class CapacityError(QKDCorrError):
    """A request exceeds a configured size limit."""


class DomainError(QKDCorrError, ValueError):
    """A closed-form expression is undefined for the given parameters."""
