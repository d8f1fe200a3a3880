"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes; library callers can catch the
base class to handle anything raised here.
"""


class AnnealBoostError(Exception):
    """Base class for all package errors."""


class ConfigError(AnnealBoostError):
    """Invalid configuration: bad parameter space, tuner settings, CLI config."""


class InputError(AnnealBoostError):
    """Invalid data handed to an operation: shape mismatch, bad labels, unreadable file."""
