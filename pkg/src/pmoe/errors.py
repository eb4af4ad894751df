"""Exception taxonomy shared by every module.

Four failure classes cover the library: bad static configuration, bad call
arguments, numerical blow-ups during training, and out-of-domain inputs to
density evaluations.
"""


class ConfigError(ValueError):
    """A configuration value or network shape is invalid before any work starts."""


class UsageError(ValueError):
    """An operation was called with arguments that violate its contract."""


class TrainingError(RuntimeError):
    """A numerical failure (NaN/Inf) occurred while training; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DomainError(ValueError):
    """A density was evaluated at a point outside its support."""
