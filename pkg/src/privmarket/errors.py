"""Exception hierarchy. Every error raised on purpose by the package derives from
:class:`PrivMarketError`, so the CLI can map them to a single exit path."""


class PrivMarketError(Exception):
    """Base class for all package errors."""


class StructuralError(PrivMarketError):
    """Datasets with incompatible shapes were combined."""


class UnknownIdError(PrivMarketError, KeyError):
    """A user or coalition id is not present in the market."""

    def __str__(self) -> str:  # KeyError quotes its argument; we don't want that
        return str(self.args[0]) if self.args else ""


class ParameterError(PrivMarketError, ValueError):
    pass


class FormatError(PrivMarketError, ValueError):
    pass


class MembershipError(PrivMarketError, ValueError):
    pass


class ConfigurationError(PrivMarketError, ValueError):
    pass


class ReportError(PrivMarketError, OSError):
    """A report could not be written or read."""
