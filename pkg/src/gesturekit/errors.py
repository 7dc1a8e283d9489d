"""Exception types shared across the toolkit."""


class GestureKitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GestureKitError, ValueError):
    """Array or tensor dimensions violate an operation's contract."""


class ConfigError(GestureKitError, ValueError):
    """Configuration value, flag, or config file is invalid."""


class DataError(GestureKitError, ValueError):
    """Input data is malformed, misaligned, or too short."""


class StateError(GestureKitError, RuntimeError):
    """Operation invoked in an invalid state, e.g. eval-mode batch norm
    before any training step, or an optimizer step without gradients."""


class ContractError(GestureKitError, RuntimeError):
    """Caller violated an operation precondition."""


class CheckpointError(GestureKitError, ValueError):
    """Checkpoint or array file is corrupt, truncated, or inconsistent
    with its embedded config."""
