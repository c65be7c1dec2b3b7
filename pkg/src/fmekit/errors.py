"""Exception types shared across the package."""


class FmeError(Exception):
    """Base class for all errors raised by fmekit."""


class ValidationError(FmeError):
    """Invalid user input: bad files, schema mismatches, bad options."""


class ComputationError(FmeError):
    """A computation could not produce a meaningful result."""
