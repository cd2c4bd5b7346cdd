"""Exception types shared across the package."""


class RganCtrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(RganCtrError, ValueError):
    """Shapes, dimensions or settings that do not fit together."""


class ValidationError(RganCtrError, ValueError):
    """Input data that violates a documented schema or range."""


class ContractError(RganCtrError, RuntimeError):
    """An operation was called outside its precondition."""


class OutputExistsError(RganCtrError, FileExistsError):
    """Refusing to overwrite existing output without an explicit force flag."""
