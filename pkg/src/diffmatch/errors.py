"""Exception types raised across the package."""


class DiffmatchError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DiffmatchError, ValueError):
    """Invalid dimensions, quotas or config-file contents."""


class ContractError(DiffmatchError, ValueError):
    """A caller violated an operation's precondition."""


class DegenerateChannelError(DiffmatchError):
    """Channel submatrix is rank deficient or too ill-conditioned for ZF.

    Callers are expected to resample the drop.
    """


class TrainingError(DiffmatchError, RuntimeError):
    """Non-finite values appeared during training."""


class SearchSpaceError(DiffmatchError):
    """Exhaustive enumeration refused because the space is too large."""
